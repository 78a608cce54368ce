use std::time::Instant;

use boxgt_core::depth::DepthMap;
use boxgt_core::pipeline::{render_frame_gt, PipelineParams};
use boxgt_core::synthetic::{mild_distortion, random_scene, upright_camera, SceneSpec};
use boxgt_core::geometry::Vec3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let frames: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(40);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cam = upright_camera(640, 480, 1.1, Vec3::new(0.0, 0.0, 1.4), 0.0, -0.1, if std::env::var("NODIST").is_ok() { Default::default() } else { mild_distortion() });
    let spec = SceneSpec { num_boxes: 50, ..SceneSpec::default() };
    let scenes: Vec<_> = (0..frames).map(|i| random_scene(&mut rng, &cam, &spec, &format!("s{i}"))).collect();
    let depth = DepthMap::constant(256, 192, 4.0);
    let params = PipelineParams::default();
    let start = Instant::now();
    let mut retained = 0;
    pool.install(|| {
        for s in &scenes {
            retained += render_frame_gt(s, "f", &cam, &depth, &params).unwrap().1.retained;
        }
    });
    let secs = start.elapsed().as_secs_f64();
    println!("{frames} frames, 50 boxes, 320x240, 1 thread: {:.1} frames/s ({retained} retained)", frames as f64 / secs);
}
