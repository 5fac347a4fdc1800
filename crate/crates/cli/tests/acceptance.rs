//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reflector_core::conics::{reflect_direction, Ellipsoid};
use reflector_core::occlusion::{mutual_clear, same_target_equivalence, OcclusionParams, PatchGeometry};
use reflector_core::reflector::{energy_g1, GeneralizedReflector, Patch, SpatialRestriction, TargetPrescription};
use reflector_core::sphere::{
    cap_area, project, radiance_integral, ConicalCylinder, Direction, Radiance, Region, SphericalSampler,
};
use reflector_core::synthesis::{carve_single_target, projection_identity_disagreement, CarveParams};
use reflector_core::verify::{
    check_interpolation_condition, energy_report, g2_equals_g1_check, InterpolationCheckParams, Tracer,
};
use serde::Deserialize;
use sha2::{Digest, Sha256};

const BIN: &str = env!("CARGO_BIN_EXE_reflector");
const A2_SAMPLES: usize = 1_000_000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

#[derive(Deserialize)]
struct Manifest {
    radiance: Radiance,
    reflector: GeneralizedReflector,
    prescription: TargetPrescription,
    residual: f64,
}

#[derive(Deserialize)]
struct Report {
    targets: Vec<TargetLine>,
    blocked_energy: f64,
    pass: bool,
}

#[derive(Deserialize)]
struct TargetLine {
    estimate: f64,
    std_error: f64,
    prescribed: f64,
}

fn run(args: &[&str], threads: Option<usize>) -> (i32, String) {
    let mut cmd = Command::new(BIN);
    if let Some(n) = threads {
        cmd.arg("--threads").arg(n.to_string());
    }
    let out = cmd.args(args).output().expect("run reflector");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn sha(path: &Path) -> String {
    format!("{:x}", Sha256::digest(std::fs::read(path).unwrap()))
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("examples/configs")
        .join(name)
}

fn a1() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xa1);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let dir = random_direction(&mut rng);
        let x = dir.as_vec() * rng.random_range(0.5..10.0);
        let d = rng.random_range(0.1..10.0);
        let e = Ellipsoid::new(x, d).unwrap();
        for _ in 0..100 {
            let m = random_direction(&mut rng);
            let p = e.point(&m);
            let y = reflect_direction(&m, &e.surface_normal(&m));
            let w = x - p;
            let miss = (w - y.as_vec() * w.dot(y.as_vec())).norm() / x.norm();
            worst = worst.max(if w.dot(y.as_vec()) > 0.0 { miss } else { f64::INFINITY });
        }
    }
    let el = t0.elapsed();
    outcome(
        worst <= 1e-8 && el < Duration::from_secs(10),
        format!(
            "10^6 rays, worst miss {worst:.2e}·|x| (limit 1e-8), {:.2}s",
            el.as_secs_f64()
        ),
    )
}

fn random_direction(rng: &mut ChaCha8Rng) -> Direction {
    let u: f64 = rng.random_range(-1.0..1.0);
    let phi: f64 = rng.random_range(0.0..2.0 * PI);
    Direction::from_axis_coords(&Direction::Z, u, phi)
}

struct A2Artifacts {
    manifest: PathBuf,
    prescription: PathBuf,
}

fn a2(dir: &Path) -> (Outcome, A2Artifacts) {
    let manifest = dir.join("a2.manifest.json");
    let prescription = dir.join("a2.prescription.json");
    let report = dir.join("a2.report.json");
    let config = config_path("rot_sym_two_rings.json");
    let t0 = Instant::now();
    let (design_code, design_err) = run(
        &[
            "design",
            "--config",
            config.to_str().unwrap(),
            "--out",
            manifest.to_str().unwrap(),
            "--prescription-out",
            prescription.to_str().unwrap(),
        ],
        None,
    );
    let n = A2_SAMPLES.to_string();
    let (verify_code, _) = run(
        &[
            "verify",
            "--manifest",
            manifest.to_str().unwrap(),
            "--prescription",
            prescription.to_str().unwrap(),
            "--samples",
            &n,
            "--seed",
            "2",
            "--out",
            report.to_str().unwrap(),
        ],
        None,
    );
    let el = t0.elapsed();
    let artifacts = A2Artifacts { manifest, prescription };
    if design_code != 0 || verify_code != 0 && verify_code != 2 {
        return (
            outcome(
                false,
                format!("design exit {design_code}: {design_err}; verify exit {verify_code}"),
            ),
            artifacts,
        );
    }
    let m: Manifest = serde_json::from_slice(&std::fs::read(&artifacts.manifest).unwrap()).unwrap();
    let r: Report = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    let mu = cap_area(0.7);
    let sigma_u = cap_area(0.7);
    let deltas_ok = r
        .targets
        .iter()
        .all(|t| (t.estimate - t.prescribed).abs() <= (0.01 * t.prescribed).max(3.0 * t.std_error));
    let worst = r
        .targets
        .iter()
        .map(|t| (t.estimate - t.prescribed).abs() / (0.01 * t.prescribed).max(3.0 * t.std_error))
        .fold(0.0, f64::max);
    let blocked_ok = r.blocked_energy <= 1e-3 * mu;
    let residual_ok = m.residual <= 1e-3 * sigma_u;
    let pass = verify_code == 0 && r.pass && deltas_ok && blocked_ok && residual_ok && el < Duration::from_secs(120);
    (
        outcome(
            pass,
            format!(
                "{} targets, worst |delta|/band {worst:.2}, blocked {:.1e}·mu_g, residual {:.1e}·sigma(U), {} patches, {:.1}s",
                r.targets.len(),
                r.blocked_energy / mu,
                m.residual / sigma_u,
                m.reflector.patches().len(),
                el.as_secs_f64()
            ),
        ),
        artifacts,
    )
}

fn load(path: &Path) -> Manifest {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn two_patch(
    a: (Vector3<f64>, Vector3<f64>, Region),
    b: (Vector3<f64>, Vector3<f64>, Region),
    z_prime: f64,
    delta: f64,
) -> GeneralizedReflector {
    let ap = Region::z_cap(0.7);
    GeneralizedReflector::new(
        vec![
            Patch::new(Ellipsoid::through_point(a.0, &a.1).unwrap(), a.2, 0),
            Patch::new(Ellipsoid::through_point(b.0, &b.1).unwrap(), b.2, 1),
        ],
        ap.clone(),
        SpatialRestriction::ConicalCylinder(ConicalCylinder::new(ap, z_prime, delta)),
    )
    .unwrap()
}

/// High inner cap reflecting outward over a low outer band: the patches
/// are clear of each other but the wall between them cuts the cap's beam.
fn wall_crossing() -> GeneralizedReflector {
    two_patch(
        (
            Vector3::new(6.0, 0.0, -1.0),
            Vector3::new(0.0, 0.0, 1.9),
            Region::z_cap(0.9),
        ),
        (
            Vector3::new(0.0, 0.0, -3.0),
            Vector3::new(0.0, 0.0, 0.9),
            Region::z_band(0.7, 0.9),
        ),
        0.5,
        2.2,
    )
}

/// As `wall_crossing`, with the band raised into the cap's beam.
fn blocking_pair() -> GeneralizedReflector {
    let m = Direction::from_axis_coords(&Direction::Z, 0.8, 0.0);
    two_patch(
        (
            Vector3::new(6.0, 0.0, -1.0),
            Vector3::new(0.0, 0.0, 1.9),
            Region::z_cap(0.9),
        ),
        (
            Vector3::new(0.0, 0.0, -3.0),
            m.as_vec() * 1.85,
            Region::z_band(0.7, 0.9),
        ),
        0.5,
        2.2,
    )
}

fn a3(art: &A2Artifacts) -> Outcome {
    let m = load(&art.manifest);
    let params = InterpolationCheckParams::default();
    let cond = check_interpolation_condition(&m.reflector, &params);
    let rep = g2_equals_g1_check(&m.reflector, &m.radiance, A2_SAMPLES, 3, &params).unwrap();
    let worst = rep
        .targets
        .iter()
        .map(|t| (t.g2 - t.g1).abs() / (3.0 * t.combined_se))
        .fold(0.0, f64::max);

    let neg = wall_crossing();
    let g = Radiance::uniform(1.0, Region::z_cap(0.7));
    let neg_cond = check_interpolation_condition(&neg, &params);
    let neg_rep = g2_equals_g1_check(&neg, &g, A2_SAMPLES, 3, &params).unwrap();
    let shadowed = &neg_rep.targets[0];
    let control = !neg_cond.holds && shadowed.g2 < shadowed.g1 - 3.0 * shadowed.combined_se;
    outcome(
        cond.holds && rep.pass && control,
        format!(
            "condition holds {} ({} walls), worst |G2-G1|/3SE {worst:.2}; control: condition holds {}, G1 {:.4} G2 {:.4} SE {:.1e}",
            cond.holds, cond.walls, neg_cond.holds, shadowed.g1, shadowed.g2, shadowed.combined_se
        ),
    )
}

fn a4() -> Outcome {
    let restriction = ConicalCylinder::new(Region::z_cap(0.9), 1.0, 0.05);
    let g = Radiance::uniform(1.0, Region::z_cap(0.9));
    let params = CarveParams {
        max_patches: 200,
        ..CarveParams::default()
    };
    let out = carve_single_target(&restriction, &Vector3::new(0.0, 0.0, -1.0), &g, &params).unwrap();
    let sigma_u = cap_area(0.9);
    let residuals: Vec<f64> = std::iter::once(out.aperture_measure.mean)
        .chain(out.trace.iter().map(|t| t.residual))
        .collect();
    let decreasing = residuals.windows(2).all(|w| w[1] < w[0]);
    let measures_ok = out.trace.windows(2).all(|w| w[1].measure <= w[0].measure);
    let final_ok = out.residual.mean <= 1e-3 * sigma_u && out.converged && out.trace.len() <= 200;
    let dirs = SphericalSampler::cap(4, 1 << 14, Direction::Z, 0.9).directions();
    let worst_identity = (0..=out.carving.len())
        .map(|k| projection_identity_disagreement(&out.carving, k, &dirs, 256))
        .fold(0.0, f64::max);
    outcome(
        decreasing && measures_ok && final_ok && worst_identity <= 1e-3,
        format!(
            "{} patches, residual {:.2e}·sigma(U), residuals strictly decreasing {decreasing}, measures non-increasing {measures_ok}, worst identity disagreement {:.2e}",
            out.trace.len(),
            out.residual.mean / sigma_u,
            worst_identity
        ),
    )
}

fn random_cap_axis(rng: &mut ChaCha8Rng, max_polar: f64) -> Direction {
    let u = rng.random_range(max_polar.cos()..1.0);
    Direction::from_axis_coords(&Direction::Z, u, rng.random_range(0.0..2.0 * PI))
}

fn cap_patch(axis: Direction, half_angle: f64, x: Vector3<f64>, radius: f64) -> PatchGeometry {
    let e = Ellipsoid::through_point(x, &(axis.as_vec() * radius)).unwrap();
    PatchGeometry::new(e, Region::cap(axis, half_angle.cos()))
}

/// Random assembly of cap patches, each aimed through the source at a
/// target behind it. Separated caps at comparable radii keep every beam
/// clear of the other patches.
fn clear_assembly(rng: &mut ChaCha8Rng) -> Vec<PatchGeometry> {
    let n = rng.random_range(2..=4);
    let mut axes: Vec<Direction> = Vec::new();
    let mut tries = 0;
    while axes.len() < n {
        // early axes can leave no room for the rest; start over
        tries += 1;
        if tries > 200 {
            axes.clear();
            tries = 0;
        }
        let a = random_cap_axis(rng, 40f64.to_radians());
        if axes.iter().all(|b| a.dot(b) < 30f64.to_radians().cos()) {
            axes.push(a);
        }
    }
    axes.into_iter()
        .map(|a| {
            let x = -a.as_vec() * rng.random_range(1.0..3.0);
            cap_patch(a, 10f64.to_radians(), x, rng.random_range(1.0..2.0))
        })
        .collect()
}

/// Adds a small patch straddling the beam of the first patch. The beam
/// from a point near the rim of the first cap leaves its cone of directions
/// on the way to the target, so the blocker can sit on separate directions.
fn blocked_assembly(rng: &mut ChaCha8Rng) -> Option<Vec<PatchGeometry>> {
    let mut patches = clear_assembly(rng);
    let a = &patches[0];
    let (axis, level) = a.region.bounding_cap().unwrap();
    let rim = Direction::from_axis_coords(&axis, (0.8 * level.acos()).cos(), rng.random_range(0.0..2.0 * PI));
    let p = a.ellipsoid.point(&rim);
    let x = *a.target();
    let separated = |b: &Direction| {
        patches.iter().all(|pg| {
            let (axis, level) = pg.region.bounding_cap().unwrap();
            axis.dot(b) < (level.acos() + 4f64.to_radians()).cos()
        })
    };
    let t0: f64 = rng.random_range(0.0..1.0);
    let (q, b_axis) = (0..64)
        .map(|i| 0.05 + 0.5 * ((t0 + i as f64 * 0.618_033_988_749_895).fract()))
        .map(|t| p + (x - p) * t)
        .filter_map(|q| project(&q).ok().map(|b| (q, b)))
        .find(|(_, b)| b.z() > 0.5 && separated(b))?;
    let xb = -b_axis.as_vec() * 2.0;
    let e = Ellipsoid::through_point(xb, &q).ok()?;
    patches.push(PatchGeometry::new(e, Region::cap(b_axis, 3f64.to_radians().cos())));
    Some(patches)
}

fn blocked_samples(patches: &[PatchGeometry]) -> u64 {
    let restriction = ConicalCylinder::new(Region::Full, 1e-3, 100.0);
    let r = GeneralizedReflector::new(
        patches
            .iter()
            .enumerate()
            .map(|(i, p)| Patch::new(p.ellipsoid.clone(), p.region.clone(), i as u32))
            .collect(),
        Region::Full,
        SpatialRestriction::ConicalCylinder(restriction),
    )
    .unwrap();
    let g = Radiance::uniform(1.0, Region::Full);
    energy_g1(&r, &g, &SphericalSampler::cap(6, 1 << 17, Direction::Z, 0.4))
        .blocked
        .count
}

fn a5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xa5);
    let params = OcclusionParams::default();
    let (mut agree, mut pairs_blocked) = (0, 0);
    let mut pairs = 0;
    while pairs < 200 {
        let x = Vector3::new(
            rng.random_range(-1.5..1.5),
            rng.random_range(-1.5..1.5),
            -rng.random_range(0.5..3.0),
        );
        let (aa, ab) = (
            random_cap_axis(&mut rng, 35f64.to_radians()),
            random_cap_axis(&mut rng, 35f64.to_radians()),
        );
        let (ha, hb) = (
            rng.random_range(3.0..12.0f64).to_radians(),
            rng.random_range(3.0..12.0f64).to_radians(),
        );
        if aa.dot(&ab) >= (ha + hb).cos() {
            continue;
        }
        let a = cap_patch(aa, ha, x, rng.random_range(0.8..3.0));
        let b = cap_patch(ab, hb, x, rng.random_range(0.8..3.0));
        let eq = same_target_equivalence(&a, &b, &params).unwrap();
        agree += eq.agree() as usize;
        pairs_blocked += (!eq.finite_cones_clear) as usize;
        pairs += 1;
    }

    let (mut consistent, mut positives, mut negatives, mut expected) = (0, 0, 0, 0);
    let mut assemblies = 0;
    while assemblies < 50 {
        let (patches, want_clear) = if assemblies % 2 == 0 {
            (clear_assembly(&mut rng), true)
        } else {
            match blocked_assembly(&mut rng) {
                Some(p) => (p, false),
                None => continue,
            }
        };
        let clear = mutual_clear(&patches, &params).clear;
        let blocked = blocked_samples(&patches);
        consistent += (clear == (blocked == 0)) as usize;
        expected += (clear == want_clear) as usize;
        if clear {
            positives += 1;
        } else {
            negatives += 1;
        }
        assemblies += 1;
    }
    outcome(
        agree == 200 && consistent == 50 && expected == 50,
        format!(
            "same-target pairs agree {agree}/200 ({pairs_blocked} blocked); assemblies mutual_clear <=> no blocked samples {consistent}/50 ({positives} clear, {negatives} blocked, {expected}/50 as constructed)"
        ),
    )
}

fn a6(art: &A2Artifacts) -> Outcome {
    let m = load(&art.manifest);
    let thin = carve_single_target(
        &ConicalCylinder::new(Region::z_cap(0.9), 1.0, 0.05),
        &Vector3::new(0.0, 0.0, -1.0),
        &Radiance::uniform(1.0, Region::z_cap(0.9)),
        &CarveParams::default(),
    )
    .unwrap();
    let g7 = Radiance::uniform(1.0, Region::z_cap(0.7));
    let empty = GeneralizedReflector::empty(
        Region::z_cap(0.7),
        SpatialRestriction::ConicalCylinder(ConicalCylinder::new(Region::z_cap(0.7), 1.0, 1.0)),
    );
    let fixtures: Vec<(&str, GeneralizedReflector, Radiance)> = vec![
        ("rot-sym", m.reflector.clone(), m.radiance.clone()),
        ("thin-slab", thin.reflector, Radiance::uniform(1.0, Region::z_cap(0.9))),
        ("wall-crossing", wall_crossing(), g7.clone()),
        ("blocking-pair", blocking_pair(), g7.clone()),
        ("empty", empty, g7),
    ];
    let mut worst_sum = 0.0f64;
    let mut worst_oracle = 0.0f64;
    let mut counts_ok = true;
    for (_, r, g) in &fixtures {
        let sampler = SphericalSampler::uniform(8, 1 << 18);
        let t = energy_g1(r, g, &sampler);
        let mu = radiance_integral(g, &Region::Full, &sampler).mean;
        let all = t.all_targets().mean;
        let lhs = all + t.blocked_energy().mean + t.lost_energy().mean;
        let singles: f64 = (0..t.targets.len()).map(|i| t.target(i).mean).sum();
        worst_sum = worst_sum
            .max((lhs - mu).abs() / mu.max(1e-300))
            .max((singles - all).abs() / all.max(1e-300));
        let binned: u64 = t.per_target.iter().map(|b| b.count).sum::<u64>() + t.blocked.count + t.lost.count + t.dark;
        counts_ok &= binned == sampler.count as u64;

        let v = Tracer::new(r, r.targets()).unwrap().tally(g, &sampler);
        for i in 0..t.targets.len() {
            let (a, b) = (t.target(i), v.target(i));
            let se = a.std_error.hypot(b.std_error);
            let ratio = if se > 0.0 {
                (a.mean - b.mean).abs() / (3.0 * se)
            } else if a.mean == b.mean {
                0.0
            } else {
                f64::INFINITY
            };
            worst_oracle = worst_oracle.max(ratio);
        }
    }
    outcome(
        worst_sum <= 1e-12 && counts_ok && worst_oracle <= 1.0,
        format!(
            "{} fixtures, worst relative bookkeeping gap {worst_sum:.1e} (summation order only, limit 1e-12), sample counts conserved {counts_ok}, worst two-oracle |diff|/3SE {worst_oracle:.2}",
            fixtures.len()
        ),
    )
}

fn a7(dir: &Path, art: &A2Artifacts) -> Outcome {
    let config = config_path("rot_sym_two_rings.json");
    let mut hashes: Vec<(String, String, String)> = Vec::new();
    for threads in [1, 4] {
        let manifest = dir.join(format!("a7.{threads}.manifest.json"));
        let report = dir.join(format!("a7.{threads}.report.json"));
        let csv = dir.join(format!("a7.{threads}.csv"));
        run(
            &[
                "design",
                "--config",
                config.to_str().unwrap(),
                "--out",
                manifest.to_str().unwrap(),
            ],
            Some(threads),
        );
        run(
            &[
                "verify",
                "--manifest",
                art.manifest.to_str().unwrap(),
                "--prescription",
                art.prescription.to_str().unwrap(),
                "--samples",
                "200000",
                "--seed",
                "7",
                "--out",
                report.to_str().unwrap(),
            ],
            Some(threads),
        );
        run(
            &[
                "trace-csv",
                "--manifest",
                art.manifest.to_str().unwrap(),
                "--samples",
                "50000",
                "--seed",
                "7",
                "--out",
                csv.to_str().unwrap(),
            ],
            Some(threads),
        );
        hashes.push((sha(&manifest), sha(&report), sha(&csv)));
    }
    let same_manifest = hashes[0].0 == hashes[1].0 && hashes[0].0 == sha(&art.manifest);
    let same_report = hashes[0].1 == hashes[1].1;
    let same_csv = hashes[0].2 == hashes[1].2;

    let m = load(&art.manifest);
    let reports: Vec<_> = [1, 3]
        .into_iter()
        .map(|n| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .unwrap()
                .install(|| energy_report(&m.reflector, &m.radiance, &m.prescription, 100_000, 9).unwrap())
        })
        .collect();
    let same_in_process = reports[0] == reports[1];
    outcome(
        same_manifest && same_report && same_csv && same_in_process,
        format!(
            "threads 1 vs 4: manifest {same_manifest}, report {same_report}, csv {same_csv}; in-process report 1 vs 3 threads {same_in_process}"
        ),
    )
}

fn report(id: &str, name: &str, t0: Instant, o: Outcome) -> bool {
    println!(
        "{id} {name}: {} ({}; {:.1} s)",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        t0.elapsed().as_secs_f64()
    );
    o.pass
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let mut failed = 0;
    let t = Instant::now();
    failed += !report("A1", "focal property", t, a1()) as usize;
    let t = Instant::now();
    let (o2, art) = a2(dir.path());
    failed += !report("A2", "two-ring rotationally symmetric design", t, o2) as usize;
    let t = Instant::now();
    failed += !report("A3", "interpolated reflector consistency", t, a3(&art)) as usize;
    let t = Instant::now();
    failed += !report("A4", "carving convergence", t, a4()) as usize;
    let t = Instant::now();
    failed += !report("A5", "occlusion lemma equivalence", t, a5()) as usize;
    let t = Instant::now();
    failed += !report("A6", "energy bookkeeping", t, a6(&art)) as usize;
    let t = Instant::now();
    failed += !report("A7", "determinism", t, a7(dir.path(), &art)) as usize;
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
