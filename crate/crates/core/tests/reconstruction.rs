use fieldct::reconstruction::*;
use fieldct::simulator::{forward_project, ideal_view_geometries, true_views, AnalyticPhantom, Ellipsoid, TrajectoryConfig};
use fieldct::{Error, Image};
use nalgebra::Vector3;

fn scan(ph: &AnalyticPhantom, cfg: &TrajectoryConfig) -> (Vec<Image>, Vec<ViewGeometry>) {
    let images = true_views(cfg)
        .unwrap()
        .iter()
        .map(|v| forward_project(ph, &v.matrix, cfg.width, cfg.height).unwrap())
        .collect();
    (images, ideal_view_geometries(cfg).unwrap())
}

fn cfg(n_views: usize, side: usize) -> TrajectoryConfig {
    TrajectoryConfig {
        n_views,
        ..TrajectoryConfig::default().resampled(side, side)
    }
}

#[test]
fn uniform_sphere_core_matches_density() {
    let ph = AnalyticPhantom::new(vec![Ellipsoid::sphere(Vector3::zeros(), 20.0, 0.02)], None, 0.0).unwrap();
    let cfg = cfg(180, 256);
    let (images, views) = scan(&ph, &cfg);
    let filtered = filter_stack(&images, &views, cfg.pixel_pitch_mm).unwrap();
    let grid = VolumeGrid::centered([64, 64, 64], [1.0; 3], [32, 32, 32]).unwrap();
    let vol = reconstruct_volume(&filtered, &grid).unwrap();
    let (mut core, mut nc, mut bg, mut nb) = (0.0, 0, 0.0, 0);
    for k in 0..64 {
        for j in 0..64 {
            for i in 0..64 {
                let r = grid.voxel_center(i, j, k).norm();
                let v = vol[i + 64 * (j + 64 * k)] as f64;
                if r < 15.0 {
                    core += v;
                    nc += 1;
                } else if r > 24.0 && r < 30.0 {
                    bg += v;
                    nb += 1;
                }
            }
        }
    }
    let (core, bg) = (core / nc as f64, bg / nb as f64);
    assert!((core - 0.02).abs() < 0.05 * 0.02, "core {core}");
    assert!(bg.abs() < 0.05 * 0.02, "background {bg}");
}

#[test]
fn single_dense_voxel_is_the_argmax() {
    let grid = VolumeGrid::centered([128, 128, 128], [0.5; 3], [32, 32, 32]).unwrap();
    let target = [71, 50, 83];
    let c = grid.voxel_center(target[0], target[1], target[2]);
    let ph = AnalyticPhantom::new(vec![Ellipsoid::sphere(c, 0.25, 1.0)], None, 0.0).unwrap();
    let cfg = cfg(180, 512);
    let (images, views) = scan(&ph, &cfg);
    let filtered = filter_stack(&images, &views, cfg.pixel_pitch_mm).unwrap();
    let mut sink = MemorySink::new(&grid);
    let summary = reconstruct_blocked(&filtered, &grid, &mut sink).unwrap();
    assert_eq!(summary.n_blocks, 64);
    let vol = sink.into_volume();
    let argmax = (0..vol.len()).max_by(|&a, &b| vol[a].total_cmp(&vol[b])).unwrap();
    assert_eq!([argmax % 128, (argmax / 128) % 128, argmax / (128 * 128)], target);
    assert_eq!(vol[argmax], summary.max);
}

#[test]
fn file_sink_volume_equals_monolithic_reconstruction() {
    let ph = AnalyticPhantom::new(
        vec![
            Ellipsoid::sphere(Vector3::new(3.0, -2.0, 1.0), 8.0, 0.02),
            Ellipsoid::sphere(Vector3::new(-6.0, 4.0, -3.0), 3.0, 0.05),
        ],
        None,
        0.0,
    )
    .unwrap();
    let cfg = cfg(60, 128);
    let (images, views) = scan(&ph, &cfg);
    let filtered = filter_stack(&images, &views, cfg.pixel_pitch_mm).unwrap();
    let grid = VolumeGrid::centered([40, 36, 30], [0.8; 3], [16, 16, 16]).unwrap();
    let mono = reconstruct_volume(&filtered, &grid).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("volume.raw");
    let mut sink = FileSink::create(&path, &grid).unwrap();
    let summary = reconstruct_blocked(&filtered, &grid, &mut sink).unwrap();
    assert_eq!(summary.n_blocks, 3 * 3 * 2);
    assert_eq!(summary.bytes_written, 4 * 40 * 36 * 30);
    let back = fieldct::rawio::read_f32_le(&path, grid.voxel_count()).unwrap();
    for (a, b) in back.iter().zip(&mono) {
        assert!((a - b).abs() <= 1e-5 * b.abs(), "{a} vs {b}");
    }
    let header = fieldct::rawio::Header::read(&fieldct::rawio::sidecar_path(&path)).unwrap();
    let vh = fieldct::rawio::VolumeHeader::from_header(&header, &path).unwrap();
    assert_eq!(vh.dims, [40, 36, 30]);
    assert!(!fieldct::rawio::partial_path(&path).exists());
}

struct FailingSink {
    fail_at: usize,
    seen: usize,
}

impl BlockSink for FailingSink {
    fn write_block(&mut self, _: &VolumeGrid, _: &Block) -> std::io::Result<()> {
        if self.seen == self.fail_at {
            return Err(std::io::Error::other("disk full"));
        }
        self.seen += 1;
        Ok(())
    }
}

#[test]
fn sink_failure_names_the_block() {
    let ph = AnalyticPhantom::new(vec![Ellipsoid::sphere(Vector3::zeros(), 5.0, 0.02)], None, 0.0).unwrap();
    let cfg = cfg(8, 64);
    let (images, views) = scan(&ph, &cfg);
    let filtered = filter_stack(&images, &views, cfg.pixel_pitch_mm).unwrap();
    let grid = VolumeGrid::centered([16, 16, 16], [1.0; 3], [8, 8, 8]).unwrap();
    let mut sink = FailingSink { fail_at: 5, seen: 0 };
    match reconstruct_blocked(&filtered, &grid, &mut sink) {
        Err(Error::SinkFailure { block, .. }) => assert_eq!(block, 5),
        other => panic!("expected sink failure, got {other:?}"),
    }
}
