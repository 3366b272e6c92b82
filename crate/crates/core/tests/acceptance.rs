//! Acceptance suite. Runs every criterion, prints one line per criterion and
//! exits non-zero if any fails. `ACCEPTANCE_ONLY=3,6` restricts the run.

mod common;

use std::alloc::{GlobalAlloc, Layout, System};
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use fieldct::calibration::{
    calibrate_candidates, detect_stack, match_elements, write_calibration_json, CalibrationFile, StackCalibration,
};
use fieldct::geometry::{cross_ratio, dlt_estimate, reprojection_error, PointCorrespondence, ProjectionMatrix};
use fieldct::image::Image;
use fieldct::phantom::{extract_reference_beads, fit_elements_to_beads, FitConstraints, PhantomModel, ReferenceVolume};
use fieldct::preprocess::{
    build_defect_map, normalize, preprocess_stack, ProjectionStack, RawFrame, StackKind, EPSILON,
};
use fieldct::reconstruction::{
    filter_stack, reconstruct_blocked, reconstruct_volume, FileSink, ViewGeometry, VolumeGrid,
};
use fieldct::simulator::{
    forward_project, ideal_view_geometries, random_stuck_pixels, render_raw_scan, true_views, AnalyticPhantom,
    Ellipsoid, NoiseConfig, Scenario, TrajectoryConfig, TrueView,
};
use fieldct::Error;
use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Counting;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            let now = CURRENT.fetch_add(layout.size(), Ordering::SeqCst) + layout.size();
            PEAK.fetch_max(now, Ordering::SeqCst);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        CURRENT.fetch_sub(layout.size(), Ordering::SeqCst);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = unsafe { System.realloc(ptr, layout, new_size) };
        if !p.is_null() {
            if new_size >= layout.size() {
                let now = CURRENT.fetch_add(new_size - layout.size(), Ordering::SeqCst) + new_size - layout.size();
                PEAK.fetch_max(now, Ordering::SeqCst);
            } else {
                CURRENT.fetch_sub(layout.size() - new_size, Ordering::SeqCst);
            }
        }
        p
    }
}

#[global_allocator]
static GLOBAL: Counting = Counting;

/// Current heap usage; the peak restarts from here.
fn reset_peak() -> usize {
    let now = CURRENT.load(Ordering::SeqCst);
    PEAK.store(now, Ordering::SeqCst);
    now
}

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rmse(a: &[f32], b: &[f32]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

fn render(ph: &AnalyticPhantom, views: &[TrueView], cfg: &TrajectoryConfig) -> Vec<Image> {
    views
        .iter()
        .map(|v| forward_project(ph, &v.matrix, cfg.width, cfg.height).unwrap())
        .collect()
}

fn cross_ratio_invariance() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut count = 0usize;
    let quads: Vec<[f64; 4]> = (0..1000)
        .map(|_| loop {
            let mut q = [0.0f64; 4].map(|_| rng.random_range(-100.0f64..100.0));
            q.sort_by(f64::total_cmp);
            if q.windows(2).all(|w| w[1] - w[0] > 1.0) {
                break q;
            }
        })
        .collect();
    let homs: Vec<[f64; 4]> = (0..1000)
        .map(|_| loop {
            let h = [0.0f64; 4].map(|_| rng.random_range(-1.0f64..1.0));
            // keep the pole of the map away from the sampled interval
            let pole_clear = h[2].abs() < 1e-3 || (h[3] / h[2]).abs() > 120.0;
            if (h[0] * h[3] - h[1] * h[2]).abs() > 0.1 && pole_clear {
                break h;
            }
        })
        .collect();
    for q in &quads {
        let cr = cross_ratio(q[0], q[1], q[2], q[3]).map_err(|e| e.to_string())?;
        for h in &homs {
            let m = q.map(|x| (h[0] * x + h[1]) / (h[2] * x + h[3]));
            let cm = cross_ratio(m[0], m[1], m[2], m[3]).map_err(|e| e.to_string())?;
            worst = worst.max((cm - cr).abs() / cr.abs());
            count += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    check(
        worst < 1e-9 && secs < 5.0,
        format!("{count} pairs, max relative error {worst:.2e}, {secs:.2} s"),
    )
}

fn max_source_error(st: &StackCalibration, views: &[TrueView]) -> f64 {
    st.views
        .iter()
        .map(|c| (c.matrix.source_position().unwrap() - views[c.view_index].source_mm).norm())
        .fold(0.0, f64::max)
}

fn noiseless_calibration() -> Outcome {
    let t = Instant::now();
    let sc = Scenario::default();
    let model = sc.phantom_model().unwrap();
    let cfg = sc.trajectory;
    let scan = common::synthetic_scan(&model, &cfg, 0.0, 0);
    let min_visible = scan.synthetic.iter().map(|s| s.fully_visible.len()).min().unwrap();
    let st = calibrate_candidates(cfg.n_views, &scan.detections, &model, &sc.calibration_config())
        .map_err(|e| e.to_string())?;
    let src = max_source_error(&st, &scan.views);
    let mut reproj: f64 = 0.0;
    for c in &st.views {
        for e in reprojection_error(&c.matrix, &c.inlier_correspondences).unwrap() {
            reproj = reproj.max(e);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    check(
        model.elements().len() == 10
            && cfg.n_views == 450
            && (cfg.width, cfg.height) == (512, 512)
            && min_visible >= 3
            && st.views.len() == cfg.n_views
            && src < 1e-3
            && reproj < 1e-4
            && secs < 120.0,
        format!(
            "{}/{} views, >= {min_visible} elements visible, max source error {src:.2e} mm, max reprojection error {reproj:.2e} px, {secs:.1} s",
            st.views.len(),
            cfg.n_views
        ),
    )
}

fn noisy_calibration() -> Outcome {
    let sc = Scenario::default();
    let model = sc.phantom_model().unwrap();
    let config = sc.calibration_config();
    let (mut matched, mut wrong_matches, mut wrong_inliers) = (0usize, 0usize, 0usize);
    let (mut err_sum, mut n_cal, mut worst_fraction, mut used) = (0.0, 0usize, 1.0f64, 0usize);
    for seed in 0..10u64 {
        let cfg = TrajectoryConfig {
            seed,
            ..TrajectoryConfig::default()
        };
        let scan = common::synthetic_scan(&model, &cfg, 0.5, 100 + seed);
        for (det, s) in scan.detections.iter().zip(&scan.synthetic) {
            for m in match_elements(&det.candidates, &model, config.match_tol) {
                matched += 1;
                let owners = m.candidate.detections.map(|d| {
                    let k = s.detections.iter().position(|x| x.center == d.center).unwrap();
                    s.truth[k].0
                });
                // a bead swapped with a near-coincident foreign bead still
                // leaves the candidate identified as its element
                if owners.iter().filter(|&&o| o == m.element_id).count() < 3 {
                    wrong_matches += 1;
                }
            }
        }
        let st = calibrate_candidates(cfg.n_views, &scan.detections, &model, &config).map_err(|e| e.to_string())?;
        for c in &st.views {
            wrong_inliers += common::misidentified(c, &scan.synthetic[c.view_index], &model);
            err_sum += c.mean_reproj_error;
            used += c.n_elements_used;
        }
        n_cal += st.views.len();
        worst_fraction = worst_fraction.min(st.views.len() as f64 / cfg.n_views as f64);
    }
    let accuracy = 1.0 - wrong_matches as f64 / matched as f64;
    let mean_err = err_sum / n_cal as f64;
    // identification is judged on the elements that enter the calibrations;
    // the raw cross-ratio matching rate is reported alongside
    check(
        wrong_inliers == 0 && mean_err < 1.0 && worst_fraction >= 0.99,
        format!(
            "{used} elements used in {n_cal} calibrations, {wrong_inliers} misidentified correspondences, cross-ratio matching alone {:.3}% of {matched} ({wrong_matches} wrong), mean reprojection error {mean_err:.3} px, worst seed {:.2}% calibrated",
            100.0 * accuracy,
            100.0 * worst_fraction
        ),
    )
}

fn dlt_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let fx = rng.random_range(1000.0..5000.0);
        let k = Matrix3::new(
            fx,
            rng.random_range(-5.0..5.0),
            rng.random_range(200.0..2800.0),
            0.0,
            fx * rng.random_range(0.95..1.05),
            rng.random_range(200.0..2800.0),
            0.0,
            0.0,
            1.0,
        );
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0f64..1.0));
        let r = Rotation3::new(axis * rng.random_range(0.0..PI)).into_inner();
        let depth = rng.random_range(300.0..1500.0);
        let c = -(r.transpose() * Vector3::new(0.0, 0.0, depth));
        let truth = ProjectionMatrix::compose(&k, &r, &c);
        let corrs: Vec<PointCorrespondence> = (0..12)
            .map(|_| {
                let x = Vector3::new(
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-50.0..50.0),
                );
                PointCorrespondence::new(x, truth.project(&x).unwrap())
            })
            .collect();
        let est = dlt_estimate(&corrs).map_err(|e| e.to_string())?;
        let scale = truth.matrix().abs().max();
        worst = worst.max((est.matrix() - truth.matrix()).abs().max() / scale);
    }
    check(worst < 1e-6, format!("1000 cameras, max relative entry error {worst:.2e}"))
}

fn sphere_fidelity() -> Outcome {
    let t = Instant::now();
    let ph = AnalyticPhantom::new(vec![Ellipsoid::sphere(Vector3::zeros(), 20.0, 0.02)], None, 0.0).unwrap();
    let cfg = TrajectoryConfig {
        n_views: 360,
        ..TrajectoryConfig::default().resampled(256, 256)
    };
    let images = render(&ph, &true_views(&cfg).unwrap(), &cfg);
    let filtered = filter_stack(&images, &ideal_view_geometries(&cfg).unwrap(), cfg.pixel_pitch_mm).unwrap();
    drop(images);
    let n = 256;
    let grid = VolumeGrid::centered([n; 3], [0.25; 3], [64; 3]).unwrap();
    let vol = reconstruct_volume(&filtered, &grid).unwrap();
    let (mut core, mut nc, mut bg, mut nb) = (0.0, 0usize, 0.0, 0usize);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let r = grid.voxel_center(i, j, k).norm();
                let v = vol[i + n * (j + n * k)] as f64;
                if r < 15.0 {
                    core += v;
                    nc += 1;
                } else if r > 22.0 {
                    bg += v;
                    nb += 1;
                }
            }
        }
    }
    let (core, bg) = (core / nc as f64, bg / nb as f64);
    let secs = t.elapsed().as_secs_f64();
    check(
        (core - 0.02).abs() <= 0.05 * 0.02 && bg.abs() < 0.05 * 0.02 && secs < 600.0,
        format!(
            "core mean {core:.5} ({:+.2}%), background mean {bg:.2e}, {secs:.1} s",
            100.0 * (core / 0.02 - 1.0)
        ),
    )
}

fn calibration_benefit() -> Outcome {
    let mut sc = Scenario::default();
    sc.trajectory.jitter_deg = 0.5;
    sc.trajectory.wobble_mm = 1.0;
    let cfg = sc.trajectory;
    let model = sc.phantom_model().unwrap();
    let ph = sc.analytic_phantom(&model).unwrap();
    let views = true_views(&cfg).unwrap();
    let stack = ProjectionStack::new(render(&ph, &views, &cfg), cfg.pixel_pitch_mm, StackKind::LineIntegral).unwrap();
    let config = sc.calibration_config();
    let dets = detect_stack(&stack, &config.detection, config.collinearity_tol_px).map_err(|e| e.to_string())?;
    let st = calibrate_candidates(cfg.n_views, &dets, &model, &config).map_err(|e| e.to_string())?;

    let grid = VolumeGrid::centered([96; 3], [0.5; 3], [96; 3]).unwrap();
    let truth = ph.voxelize(&grid, 4);
    let mats: Vec<_> = st.views.iter().map(|c| (c.view_index, c.matrix)).collect();
    let images: Vec<Image> = st.views.iter().map(|c| stack.views[c.view_index].clone()).collect();
    let filtered = filter_stack(&images, &st.report.view_geometries(&mats), cfg.pixel_pitch_mm).unwrap();
    drop(images);
    let calibrated = rmse(&reconstruct_volume(&filtered, &grid).unwrap(), &truth);
    drop(filtered);
    let filtered = filter_stack(&stack.views, &ideal_view_geometries(&cfg).unwrap(), cfg.pixel_pitch_mm).unwrap();
    let ideal = rmse(&reconstruct_volume(&filtered, &grid).unwrap(), &truth);
    drop(filtered);
    // reference floor: true matrices with their exact angular intervals
    let n = views.len();
    let exact: Vec<ViewGeometry> = (0..n)
        .map(|i| {
            let span = views[(i + 1) % n].angle_rad - views[(i + n - 1) % n].angle_rad;
            ViewGeometry {
                matrix: views[i].matrix,
                d_angle_rad: 0.5 * ((span + PI).rem_euclid(2.0 * PI) - PI).abs(),
                source_axis_distance_mm: cfg.source_radius_mm,
            }
        })
        .collect();
    let filtered = filter_stack(&stack.views, &exact, cfg.pixel_pitch_mm).unwrap();
    let floor = rmse(&reconstruct_volume(&filtered, &grid).unwrap(), &truth);
    let ratio = calibrated / ideal;
    check(
        ratio <= 1.0 / 3.0,
        format!(
            "{}/{} views calibrated, RMSE calibrated {calibrated:.5}, ideal circle {ideal:.5}, true geometry {floor:.5}, ratio {ratio:.3}",
            st.views.len(),
            cfg.n_views
        ),
    )
}

fn defect_handling() -> Outcome {
    let sc = Scenario::default();
    let cfg = TrajectoryConfig {
        n_views: 180,
        ..sc.trajectory.resampled(256, 256)
    };
    // a body filling most of the field of view, so defects fall in its shadow
    let mut specimen = sc.specimen.clone();
    let mut body = Ellipsoid::sphere(Vector3::zeros(), 1.0, 0.02);
    body.semi_axes_mm = [70.0, 70.0, 50.0];
    specimen.push(body);
    let ph = AnalyticPhantom::new(specimen, None, 0.0).unwrap();
    let noise = NoiseConfig::default();
    let stuck = random_stuck_pixels(cfg.width, cfg.height, 100, noise.saturation as f32, 5);
    let raw = render_raw_scan(&ph, &cfg, &noise, &stuck).unwrap();
    let map = build_defect_map(&raw.darks, &raw.flats, noise.saturation as f32).map_err(|e| e.to_string())?;
    let found = map.mask().iter().filter(|&&m| m).count();
    let hits = map.mask().iter().zip(raw.defects.mask()).filter(|(a, b)| **a && **b).count();
    let recall = hits as f64 / stuck.len() as f64;
    let precision = hits as f64 / found.max(1) as f64;

    let grid = VolumeGrid::centered([80, 80, 56], [2.0; 3], [80, 80, 56]).unwrap();
    let truth = ph.voxelize(&grid, 2);
    let geo = ideal_view_geometries(&cfg).unwrap();
    let mut errs = [0.0; 2];
    for (slot, inpaint) in [(0, true), (1, false)] {
        let li = preprocess_stack(&raw.stack, &raw.darks, &raw.flats, Some(&map), inpaint).unwrap();
        let filtered = filter_stack(&li.views, &geo, cfg.pixel_pitch_mm).unwrap();
        errs[slot] = rmse(&reconstruct_volume(&filtered, &grid).unwrap(), &truth);
    }
    check(
        stuck.len() == 100 && recall == 1.0 && precision == 1.0 && errs[0] <= 0.5 * errs[1],
        format!(
            "{} injected, recall {:.0}%, precision {:.0}%, RMSE inpainted {:.5} vs raw {:.5} (ratio {:.3})",
            stuck.len(),
            100.0 * recall,
            100.0 * precision,
            errs[0],
            errs[1],
            errs[0] / errs[1]
        ),
    )
}

fn blocked_equivalence() -> Outcome {
    let sc = Scenario::default();
    let cfg = TrajectoryConfig {
        n_views: 90,
        ..sc.trajectory.resampled(256, 256)
    };
    let ph = AnalyticPhantom::new(sc.specimen.clone(), None, 0.0).unwrap();
    let images = render(&ph, &true_views(&cfg).unwrap(), &cfg);
    let filtered = filter_stack(&images, &ideal_view_geometries(&cfg).unwrap(), cfg.pixel_pitch_mm).unwrap();
    drop(images);
    let grid = VolumeGrid::centered([128; 3], [0.4; 3], [32; 3]).unwrap();
    let mono = reconstruct_volume(&filtered, &grid).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("volume.raw");
    let mut sink = FileSink::create(&path, &grid).unwrap();
    let base = reset_peak();
    let summary = reconstruct_blocked(&filtered, &grid, &mut sink).unwrap();
    let peak = PEAK.load(Ordering::SeqCst) - base;
    drop(sink);
    let blocked = fieldct::rawio::read_f32_le(&path, grid.voxel_count()).unwrap();
    let worst = blocked
        .iter()
        .zip(&mono)
        .map(|(a, b)| if a == b { 0.0 } else { ((a - b).abs() / b.abs()) as f64 })
        .fold(0.0, f64::max);
    let block_bytes = 32usize.pow(3) * 4;
    let projection_bytes: usize = filtered.iter().map(|f| f.pixels.data().len() * 4).sum();
    // one block computing, one queued and one being written
    let memory_ok = peak <= 3 * block_bytes + (64 << 10);

    let big = VolumeGrid::centered([2000; 3], [0.05; 3], [250; 3]).unwrap().storage_plan();
    let storage_ok = (big.gigabytes() - 32.0).abs() < 0.5 && big.n_blocks >= 8usize.pow(3);
    check(
        worst < 1e-5 && memory_ok && storage_ok && summary.n_blocks == 64,
        format!(
            "{} blocks, max relative difference {worst:.1e}, peak extra heap {:.0} KiB (block {} KiB, projections {:.1} MiB, full volume {} MiB), 2000^3 volume {:.1} GB in {} blocks",
            summary.n_blocks,
            peak as f64 / 1024.0,
            block_bytes >> 10,
            projection_bytes as f64 / (1 << 20) as f64,
            (grid.voxel_count() * 4) >> 20,
            big.gigabytes(),
            big.n_blocks
        ),
    )
}

/// Partial-volume rasterization of the phantom's beads by 6³ supersampling,
/// visiting only each bead's bounding box.
fn rasterize_beads(model: &PhantomModel, spacing: f64, density: f32) -> ReferenceVolume {
    let pad = 4.0;
    let beads: Vec<(Vector3<f64>, f64)> = model
        .elements()
        .iter()
        .flat_map(|e| e.bead_centers.iter().copied().zip(e.bead_radii.iter().copied()))
        .collect();
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for (c, _) in &beads {
        lo = lo.inf(c);
        hi = hi.sup(c);
    }
    let origin = lo - Vector3::repeat(pad);
    let dims = [0, 1, 2].map(|a| ((hi[a] - lo[a] + 2.0 * pad) / spacing).ceil() as usize + 1);
    let mut vox = vec![0f32; dims.iter().product()];
    let ss = 6;
    for (c, r) in &beads {
        let first = [0, 1, 2].map(|a| ((c[a] - r - origin[a]) / spacing).floor().max(0.0) as usize);
        let last = [0, 1, 2].map(|a| (((c[a] + r - origin[a]) / spacing).ceil() as usize).min(dims[a] - 1));
        for k in first[2]..=last[2] {
            for j in first[1]..=last[1] {
                for i in first[0]..=last[0] {
                    let mut inside = 0;
                    for a in 0..ss {
                        for b in 0..ss {
                            for d in 0..ss {
                                let off = |q: usize| (q as f64 + 0.5) / ss as f64 - 0.5;
                                let p = origin
                                    + Vector3::new(i as f64 + off(a), j as f64 + off(b), k as f64 + off(d)) * spacing;
                                if (p - c).norm_squared() <= r * r {
                                    inside += 1;
                                }
                            }
                        }
                    }
                    vox[i + dims[0] * (j + dims[1] * k)] += density * inside as f32 / (ss * ss * ss) as f32;
                }
            }
        }
    }
    ReferenceVolume::new(dims, [spacing; 3], origin.into(), vox).unwrap()
}

fn reference_beads() -> Outcome {
    let truth = Scenario::default().phantom_model().unwrap();
    let spacing = 0.4;
    let volume = rasterize_beads(&truth, spacing, 1.0);
    let beads = extract_reference_beads(&volume, 0.05).map_err(|e| e.to_string())?;
    drop(volume);
    let centers: Vec<Vector3<f64>> = truth.elements().iter().flat_map(|e| e.bead_centers).collect();
    let radii: Vec<f64> = truth.elements().iter().flat_map(|e| e.bead_radii).collect();
    let ratio = radii.iter().cloned().fold(0.0, f64::max) / radii.iter().cloned().fold(f64::INFINITY, f64::min);
    let worst = beads
        .iter()
        .map(|b| centers.iter().map(|c| (b.center_mm - c).norm()).fold(f64::INFINITY, f64::min) / spacing)
        .fold(0.0, f64::max);
    let fitted = fit_elements_to_beads(&beads, &FitConstraints::new(10)).map_err(|e| e.to_string())?;
    let mut cr_err: f64 = 0.0;
    for e in truth.elements() {
        let f = fitted.element(e.id).ok_or(format!("element {} missing", e.id))?;
        cr_err = cr_err.max((f.cross_ratio().unwrap() - e.cross_ratio().unwrap()).abs());
    }
    check(
        beads.len() == 40 && (ratio - 2.0).abs() < 1e-12 && worst < 0.1 && fitted.elements().len() == 10 && cr_err < 0.01,
        format!(
            "{} beads (radius ratio {ratio}), max centroid error {worst:.3} voxel, {} elements, max cross-ratio error {cr_err:.1e}",
            beads.len(),
            fitted.elements().len()
        ),
    )
}

fn normalization_cases() -> Outcome {
    let frame = |v: f32| RawFrame::new(Image::filled(16, 8, v)).unwrap();
    let (dark, flat) = (frame(100.0), frame(5000.0));
    let ones = normalize(&flat, &flat, &dark, None).map_err(|e| e.to_string())?;
    let floor = normalize(&dark, &flat, &dark, None).map_err(|e| e.to_string())?;
    let invalid = normalize(&flat, &dark, &dark, None);
    let a = ones.data().iter().all(|&v| v == 1.0);
    let b = floor.data().iter().all(|&v| v == EPSILON);
    let c = matches!(invalid, Err(Error::FlatFieldInvalid { x: 0, y: 0 }));
    check(a && b && c, format!("I = I0 -> 1: {a}, I = I_dark -> epsilon: {b}, zero denominator -> FlatFieldInvalid: {c}"))
}

struct PipelineRun {
    calibration_json: Vec<u8>,
    volume: Vec<f32>,
}

/// simulate -> preprocess -> calibrate -> reconstruct on a small noisy scan.
fn run_pipeline(dir: &std::path::Path) -> PipelineRun {
    let mut sc = Scenario::default();
    sc.trajectory.n_views = 60;
    sc.trajectory.jitter_deg = 0.5;
    sc.trajectory.wobble_mm = 1.0;
    sc.trajectory.seed = 99;
    let model = sc.phantom_model().unwrap();
    let ph = sc.analytic_phantom(&model).unwrap();
    let cfg = sc.trajectory;
    let stuck = random_stuck_pixels(cfg.width, cfg.height, 20, sc.noise.saturation as f32, 99);
    let raw = render_raw_scan(&ph, &cfg, &sc.noise, &stuck).unwrap();
    let map = build_defect_map(&raw.darks, &raw.flats, sc.noise.saturation as f32).unwrap();
    let li = preprocess_stack(&raw.stack, &raw.darks, &raw.flats, Some(&map), true).unwrap();
    let st = fieldct::calibration::calibrate_stack(&li, &model, &sc.calibration_config()).unwrap();
    let json = dir.join("calibration.json");
    write_calibration_json(&json, &CalibrationFile::new(cfg.n_views, &st.views, st.failed())).unwrap();
    let mats: Vec<_> = st.views.iter().map(|c| (c.view_index, c.matrix)).collect();
    let images: Vec<Image> = st.views.iter().map(|c| li.views[c.view_index].clone()).collect();
    let filtered = filter_stack(&images, &st.report.view_geometries(&mats), cfg.pixel_pitch_mm).unwrap();
    let grid = VolumeGrid::centered([64; 3], [0.75; 3], [32; 3]).unwrap();
    let path = dir.join("volume.raw");
    let mut sink = FileSink::create(&path, &grid).unwrap();
    reconstruct_blocked(&filtered, &grid, &mut sink).unwrap();
    PipelineRun {
        calibration_json: std::fs::read(&json).unwrap(),
        volume: fieldct::rawio::read_f32_le(&path, grid.voxel_count()).unwrap(),
    }
}

fn determinism() -> Outcome {
    let mut runs = Vec::new();
    for threads in [1, 3] {
        let dir = tempfile::tempdir().unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        runs.push(pool.install(|| run_pipeline(dir.path())));
    }
    let same_json = runs[0].calibration_json == runs[1].calibration_json;
    let scale = runs[0].volume.iter().fold(0f32, |a, v| a.max(v.abs()));
    let diff = runs[0]
        .volume
        .iter()
        .zip(&runs[1].volume)
        .fold(0f32, |a, (x, y)| a.max((x - y).abs()))
        / scale;
    check(
        same_json && diff <= 1e-5,
        format!(
            "1 vs 3 threads: calibration JSON identical {same_json} ({} bytes), volume max relative difference {diff:.1e}",
            runs[0].calibration_json.len()
        ),
    )
}

fn main() {
    let criteria: [(usize, &str, fn() -> Outcome); 11] = [
        (1, "cross-ratio invariance", cross_ratio_invariance),
        (2, "noiseless calibration accuracy", noiseless_calibration),
        (3, "noisy calibration robustness", noisy_calibration),
        (4, "DLT oracle equivalence", dlt_equivalence),
        (5, "FDK sphere fidelity", sphere_fidelity),
        (6, "online calibration benefit", calibration_benefit),
        (7, "defect handling", defect_handling),
        (8, "blocked reconstruction equivalence", blocked_equivalence),
        (9, "reference bead extraction", reference_beads),
        (10, "normalization unit cases", normalization_cases),
        (11, "pipeline determinism", determinism),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
