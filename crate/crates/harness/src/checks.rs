//! Acceptance checks shared by `vino selftest` and the acceptance test target.

use std::fmt;
use std::time::{Duration, Instant};

use vino_core::{
    blend, ddim_invert_step, ddim_step, default_schedule, denoise_trajectory, dilate,
    invert_trajectory, make_plan, mask_union, zero_image_guidance, BinaryMask, ConstantDenoiser,
    Dims, EmbeddingProvider, HashEmbedder, ImageDescriptor, InversionGuidance, SeedStream,
    VideoLatent,
};

use crate::config::RunConfig;
use crate::metrics::{centroid, changed_mask, masked_l2, psnr, region_mean, temporal_score};
use crate::run::{edit, edited_container, sha256_hex, synth_containers};
use crate::scenario::{render_target, synth_video, ScenarioSpec};

/// SHA-256 of the canonical source container (`synth` output).
pub const GOLDEN_CANONICAL_SOURCE_SHA256: &str =
    "2613705ff95772b5a512b1f133a25fc255e65d19227eb9f9790f000aca86d0e7";
/// SHA-256 of `edited.vint` for the canonical config.
pub const GOLDEN_CANONICAL_EDIT_SHA256: &str =
    "fd3feeadf2f25384c1a8098989b36e602411eef3abd31f33387a61bb22b6b141";
/// Temporal score of the canonical source under the default embedder.
pub const GOLDEN_CANONICAL_TEMPORAL: f64 = 0.9962615449023859;
/// Round-trip relative error of the single-Gaussian inversion at nu = 50 and 100.
pub const GOLDEN_ROUNDTRIP_NU50: f64 = 1.2514425455702052e-1;
pub const GOLDEN_ROUNDTRIP_NU100: f64 = 6.113736956871603e-2;

#[derive(Debug, Clone)]
pub struct Check {
    pub id: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {} {}: {} ({:.2} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

type Outcome = std::result::Result<String, String>;

fn timed(id: &'static str, name: &'static str, body: impl FnOnce() -> Outcome) -> Check {
    let start = Instant::now();
    let res = body();
    let elapsed = start.elapsed();
    let (passed, detail) = match res {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    Check {
        id,
        name,
        passed,
        detail,
        elapsed,
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: fmt::Display>(e: E) -> String {
    e.to_string()
}

fn random_mask(h: usize, w: usize, stream: &SeedStream, threshold: f64) -> BinaryMask {
    let v = stream.normals(h * w);
    BinaryMask::from_fn(1, h, w, |_, y, x| v[y * w + x] > threshold).expect("valid dims")
}

fn brute_dilate(m: &BinaryMask, k: usize) -> BinaryMask {
    let r = (k / 2) as isize;
    let (h, w) = (m.height() as isize, m.width() as isize);
    BinaryMask::from_fn(m.frames(), m.height(), m.width(), |f, p, q| {
        let mut best = 0u8;
        for i in -r..=r {
            for j in -r..=r {
                let (y, x) = (p as isize + i, q as isize + j);
                if (0..h).contains(&y) && (0..w).contains(&x) && m.get(f, y as usize, x as usize) {
                    best = 1;
                }
            }
        }
        best == 1
    })
    .expect("valid dims")
}

/// 1. Dilation equals brute-force neighborhood max; morphological laws hold.
pub fn mask_morphology() -> Check {
    timed("1", "mask morphology", || {
        let root = SeedStream::new(2024, "accept.masks");
        let mut cases = 0;
        for i in 0..100 {
            let a = random_mask(16, 16, &root.child(&format!("a{i}")), 1.3);
            let b = random_mask(16, 16, &root.child(&format!("b{i}")), 1.3);
            let extra = random_mask(16, 16, &root.child(&format!("c{i}")), 1.5);
            let sup = mask_union(&a, &extra).map_err(err)?;
            let ab = mask_union(&a, &b).map_err(err)?;
            for k in [3, 5, 7] {
                let da = dilate(&a, k).map_err(err)?;
                let db = dilate(&b, k).map_err(err)?;
                ensure(da == brute_dilate(&a, k), || {
                    format!("oracle mismatch mask {i} k {k}")
                })?;
                ensure(a.is_subset_of(&da), || {
                    format!("not extensive: mask {i} k {k}")
                })?;
                ensure(da.is_subset_of(&dilate(&sup, k).map_err(err)?), || {
                    format!("not monotone: mask {i} k {k}")
                })?;
                ensure(
                    dilate(&ab, k).map_err(err)? == mask_union(&da, &db).map_err(err)?,
                    || format!("union distribution fails: mask {i} k {k}"),
                )?;
                cases += 1;
            }
            let twice = dilate(&dilate(&a, 3).map_err(err)?, 3).map_err(err)?;
            ensure(twice == dilate(&a, 5).map_err(err)?, || {
                format!("dilate3 twice != dilate5: mask {i}")
            })?;
        }
        Ok(format!("{cases} mask/kernel cases exact"))
    })
}

fn scalar(v: f64) -> VideoLatent {
    VideoLatent::filled(Dims::new(1, 1, 1, 1), v).expect("finite")
}

/// 2. DDIM step and inversion are exact inverses; constant-denoiser round trip.
pub fn ddim_exactness() -> Check {
    timed("2", "DDIM exactness", || {
        let s = default_schedule();
        let stream = SeedStream::new(7, "accept.ddim");
        let g = stream.normals(4 * 10_000);
        let mut worst: f64 = 0.0;
        for i in 0..10_000 {
            let (z, eps) = (g[4 * i], g[4 * i + 1]);
            let t = 2 + ((g[4 * i + 2].abs() * 1e6) as usize) % 999;
            let prev = ((g[4 * i + 3].abs() * 1e6) as usize) % t;
            let (ab_t, ab_prev) = (
                s.alpha_bar(t).map_err(err)?,
                s.alpha_bar(prev).map_err(err)?,
            );
            let out = ddim_step(&scalar(z), &scalar(eps), ab_t, ab_prev).map_err(err)?;
            let back = ddim_invert_step(&out, &scalar(eps), ab_t, ab_prev).map_err(err)?;
            // relative to the input magnitude |(z, eps)|
            let rel = (back.data()[0] - z).abs() / z.hypot(eps);
            worst = worst.max(rel);
        }
        ensure(worst <= 1e-12, || {
            format!("scalar round trip error {worst:e}")
        })?;

        let dims = Dims::new(8, 4, 32, 32);
        let z0 = vino_core::gaussian(dims, &stream.child("z0")).map_err(err)?;
        let den =
            ConstantDenoiser::tensor(vino_core::gaussian(dims, &stream.child("eps")).map_err(err)?);
        let plan = make_plan(&s, 50, 50).map_err(err)?;
        let provider = HashEmbedder::new(8, 1).map_err(err)?;
        let cond = vino_core::build_condition_set(
            &provider,
            &ImageDescriptor::Zero,
            "",
            "",
            0.5,
            0.0,
            Default::default(),
        )
        .map_err(err)?;
        let traj = invert_trajectory(
            &z0,
            &s,
            &plan,
            &den,
            &cond,
            50,
            InversionGuidance::PositiveOnly,
        )
        .map_err(err)?;
        let top = traj.get(50).map_err(err)?;
        let back = denoise_trajectory(top, 50, &s, &plan, &den, &cond, None).map_err(err)?;
        let rel = vino_core::l2_rel(&back, &z0).map_err(err)?;
        ensure(rel <= 1e-9, || format!("latent round trip error {rel:e}"))?;
        Ok(format!(
            "scalar worst {worst:.2e}, 8x4x32x32 round trip {rel:.2e}"
        ))
    })
}

/// Relative reconstruction error of invert-then-denoise with a single
/// Gaussian at the target render, on the canonical source.
pub fn roundtrip_error(nu: usize) -> std::result::Result<f64, String> {
    let spec = ScenarioSpec::canonical();
    let (src, _) = synth_video(&spec).map_err(err)?;
    let (target, _) = render_target(&spec).map_err(err)?;
    let s = default_schedule();
    let plan = make_plan(&s, nu, nu).map_err(err)?;
    let provider = HashEmbedder::new(16, 3).map_err(err)?;
    let cond = vino_core::build_condition_set(
        &provider,
        &spec.target_image(),
        "",
        "",
        0.5,
        0.0,
        Default::default(),
    )
    .map_err(err)?;
    let mut g = vino_core::GmmDenoiser::new();
    let id = g.add_component(target, 0.05).map_err(err)?;
    g.register(cond.positive_key(), &[(id, 1.0)]).map_err(err)?;
    let traj = invert_trajectory(
        &src,
        &s,
        &plan,
        &g,
        &cond,
        nu,
        InversionGuidance::PositiveOnly,
    )
    .map_err(err)?;
    let back = denoise_trajectory(traj.get(nu).map_err(err)?, nu, &s, &plan, &g, &cond, None)
        .map_err(err)?;
    vino_core::l2_rel(&back, &src).map_err(err)
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs()
}

/// 3. Finer inversion grids reconstruct better.
pub fn inversion_refinement() -> Check {
    timed("3", "inversion refinement", || {
        let e50 = roundtrip_error(50)?;
        let e100 = roundtrip_error(100)?;
        ensure(e100 < e50, || {
            format!("nu=100 error {e100:e} not below nu=50 error {e50:e}")
        })?;
        ensure(
            close(e50, GOLDEN_ROUNDTRIP_NU50, 1e-9) && close(e100, GOLDEN_ROUNDTRIP_NU100, 1e-9),
            || format!("goldens moved: nu=50 {e50:e}, nu=100 {e100:e}"),
        )?;
        Ok(format!("nu=50 {e50:.6e} > nu=100 {e100:.6e}"))
    })
}

struct CanonicalRun {
    spec: ScenarioSpec,
    source: VideoLatent,
    outcome: vino_core::EditOutcome,
}

fn canonical_run(rho1: usize) -> std::result::Result<CanonicalRun, String> {
    let spec = ScenarioSpec::canonical();
    let (source, _) = synth_video(&spec).map_err(err)?;
    let mut cfg = RunConfig::for_scenario(&spec);
    cfg.edit.rho_stage1 = rho1;
    let outcome = edit(&cfg, &source).map_err(err)?;
    Ok(CanonicalRun {
        spec,
        source,
        outcome,
    })
}

/// 4. Background outside the final mask is the source itself.
pub fn background_exactness() -> Check {
    timed("4", "background exactness", || {
        let run = canonical_run(20)?;
        let (ve, vs, me) = (run.outcome.edited(), &run.source, &run.outcome.final_mask);
        let d = vs.dims();
        let mut worst: f64 = 0.0;
        for f in 0..d.frames {
            for y in 0..d.height {
                for x in 0..d.width {
                    if !me.get(f, y, x) {
                        for c in 0..d.channels {
                            worst = worst.max((ve.get(f, c, y, x) - vs.get(f, c, y, x)).abs());
                        }
                    }
                }
            }
        }
        ensure(worst <= 1e-12, || format!("background deviation {worst:e}"))?;
        let p = psnr(ve, vs, Some(&me.complement())).map_err(err)?;
        ensure(p == f64::INFINITY, || {
            format!("background PSNR {p} is finite")
        })?;
        Ok(format!(
            "max |V_e - V_s| outside M_e = {worst:e}, PSNR = inf"
        ))
    })
}

/// 5. The object becomes the target color, changes stay inside the mask and follow the path.
pub fn edit_efficacy() -> Check {
    timed("5", "edit efficacy", || {
        let run = canonical_run(20)?;
        let (_, target_mask) = render_target(&run.spec).map_err(err)?;
        let ve = run.outcome.edited();
        let mean = region_mean(ve, &target_mask).map_err(err)?;
        let want = run.spec.target.color;
        let color_err = (0..3)
            .map(|c| (mean[c] - want[c]).abs())
            .fold(0.0, f64::max);
        ensure(color_err < 0.05, || {
            format!("mean color {mean:.3?} vs target {want:?} (error {color_err:.4})")
        })?;
        let changed = changed_mask(ve, &run.source).map_err(err)?;
        ensure(changed.is_subset_of(&run.outcome.final_mask), || {
            "changes outside M_e".into()
        })?;
        let mut worst: f64 = 0.0;
        for f in 0..run.spec.frames {
            let (cy, cx) = centroid(&changed, f).ok_or_else(|| format!("frame {f} unchanged"))?;
            let (py, px) = run.spec.source.center(f);
            worst = worst.max((cy - py).hypot(cx - px));
        }
        ensure(worst <= 2.0, || {
            format!("changed-region centroid off path by {worst:.3} px")
        })?;
        Ok(format!(
            "mean {:.4?} (max error {color_err:.4}), centroid drift {worst:.3} px",
            &mean[..3]
        ))
    })
}

/// Masked L2 distance to the source for each rho_1, the other settings canonical.
pub fn rho_sweep(rhos: &[usize]) -> std::result::Result<Vec<f64>, String> {
    rhos.iter()
        .map(|&r| {
            let run = canonical_run(r)?;
            masked_l2(run.outcome.edited(), &run.source, &run.outcome.final_mask).map_err(err)
        })
        .collect()
}

/// 6. Larger rho_1 moves the edit further from the source.
pub fn rho_monotonicity() -> Check {
    timed("6", "rho monotonicity", || {
        let rhos = [5, 10, 20, 40];
        let d = rho_sweep(&rhos)?;
        ensure(d.windows(2).all(|w| w[0] <= w[1]), || {
            format!("distances {d:?} not non-decreasing")
        })?;
        Ok(format!("rho {rhos:?} -> masked L2 {:.4?}", d))
    })
}

/// 7. The zero-image guidance norm scales linearly in gamma.
pub fn gamma_algebra() -> Check {
    timed("7", "gamma algebra", || {
        let p = HashEmbedder::new(64, 7).map_err(err)?;
        let base = p.embed_image(&ImageDescriptor::Zero).map_err(err)?.norm();
        let mut worst: f64 = 0.0;
        for g in [0.0, 0.25, 0.5, 1.0] {
            let n = zero_image_guidance(&p, g).map_err(err)?.norm();
            worst = worst.max((n - g * base).abs());
        }
        ensure(worst <= 1e-12, || format!("norm deviation {worst:e}"))?;
        Ok(format!(
            "max | ||c(gamma)|| - gamma ||embed(I0)|| | = {worst:e}"
        ))
    })
}

/// Bytes of `edited.vint` for the canonical config.
pub fn canonical_edit_bytes() -> std::result::Result<Vec<u8>, String> {
    let spec = ScenarioSpec::canonical();
    let (source, _) = synth_video(&spec).map_err(err)?;
    let cfg = RunConfig::for_scenario(&spec);
    let outcome = edit(&cfg, &source).map_err(err)?;
    edited_container(&cfg, &source, &outcome)
        .to_bytes()
        .map_err(err)
}

fn in_pool<T: Send>(
    threads: usize,
    f: impl FnOnce() -> T + Send,
) -> std::result::Result<T, String> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(err)?;
    Ok(pool.install(f))
}

/// 8. Byte-identical output across runs and thread counts.
pub fn determinism() -> Check {
    timed("8", "determinism golden", || {
        let a = in_pool(1, canonical_edit_bytes)??;
        let b = in_pool(1, canonical_edit_bytes)??;
        let c = in_pool(4, canonical_edit_bytes)??;
        ensure(a == b, || "two single-threaded runs differ".into())?;
        ensure(a == c, || "1-thread and 4-thread runs differ".into())?;
        let hash = sha256_hex(&a);
        ensure(hash == GOLDEN_CANONICAL_EDIT_SHA256, || {
            format!("edited.vint sha256 {hash} != golden")
        })?;
        Ok(format!("edited.vint sha256 {hash}"))
    })
}

/// 9. Full two-stage edit at 16 x 4 x 64 x 64, nu = 50, on one thread.
pub fn runtime() -> Check {
    timed("9", "desk-scale runtime", || {
        let spec = ScenarioSpec::runtime();
        let (source, _) = synth_video(&spec).map_err(err)?;
        let cfg = RunConfig::for_scenario(&spec);
        let start = Instant::now();
        let outcome = in_pool(1, || edit(&cfg, &source))?.map_err(err)?;
        let secs = start.elapsed().as_secs_f64();
        ensure(outcome.edited().dims() == source.dims(), || {
            "output dims differ".into()
        })?;
        ensure(secs < 10.0, || format!("took {secs:.2} s"))?;
        Ok(format!("{} edit in {secs:.2} s", source.dims()))
    })
}

/// Frozen scenario goldens: canonical source hash and temporal score.
pub fn scenario_goldens() -> Check {
    timed("G", "scenario goldens", || {
        let (src, _) = synth_containers(&ScenarioSpec::canonical()).map_err(err)?;
        let hash = sha256_hex(&src.to_bytes().map_err(err)?);
        ensure(hash == GOLDEN_CANONICAL_SOURCE_SHA256, || {
            format!("source sha256 {hash} != golden")
        })?;
        let cfg = RunConfig::canonical();
        let temporal = temporal_score(
            &src.to_latent().map_err(err)?,
            &cfg.embedder.build().map_err(err)?,
        )
        .map_err(err)?;
        ensure(close(temporal, GOLDEN_CANONICAL_TEMPORAL, 1e-12), || {
            format!("temporal {temporal:.17} != golden")
        })?;
        Ok(format!("source sha256 {hash}, temporal {temporal:.6}"))
    })
}

/// All acceptance criteria in order.
pub fn acceptance() -> Vec<Check> {
    vec![
        mask_morphology(),
        ddim_exactness(),
        inversion_refinement(),
        background_exactness(),
        edit_efficacy(),
        rho_monotonicity(),
        gamma_algebra(),
        determinism(),
        runtime(),
    ]
}

/// Acceptance criteria plus the scenario goldens and a few structural invariants.
pub fn selftest() -> Vec<Check> {
    let mut v = acceptance();
    v.push(scenario_goldens());
    v.push(timed("S", "blend saturation", || {
        let d = Dims::new(2, 3, 4, 4);
        let a = vino_core::gaussian(d, &SeedStream::new(1, "st.a")).map_err(err)?;
        let b = vino_core::gaussian(d, &SeedStream::new(1, "st.b")).map_err(err)?;
        let ones = BinaryMask::ones(2, 4, 4).map_err(err)?;
        ensure(blend(&a, &b, &ones).map_err(err)? == a, || {
            "ones mask".into()
        })?;
        ensure(blend(&a, &b, &ones.complement()).map_err(err)? == b, || {
            "zeros mask".into()
        })?;
        Ok("all-ones and all-zeros masks saturate".into())
    }));
    v
}
