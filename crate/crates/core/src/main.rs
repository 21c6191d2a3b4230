use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;
use slabinv::boundary::{BoundaryField, PatchSquare};
use slabinv::cgo::{make_frame, make_phase_pair, Variant};
use slabinv::dnmap::{assemble_dn, BoundaryBasis, DnContext};
use slabinv::fields::{bump_potential, Potential};
use slabinv::forward::{BoundaryMode, HelmholtzOperator};
use slabinv::geometry::{build_domain, build_periodic_domain, commensurate_box, BoundaryPatch, GeometryConfig, Grid3, Plate, SlabGeometry};
use slabinv::harness::{self, CarlemanConfig, SweepConfig};
use slabinv::io;
use slabinv::recovery::{self, ContinuationConfig, FrequencySet, RecoveryContext};
use slabinv::{Error, C64};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "slabinv", about = "Forward solves, DN maps, CGO probes and stability experiments for a slab")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum, Serialize, Deserialize)]
enum Mode {
    Truncated,
    Periodic,
}

impl From<Mode> for BoundaryMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Truncated => BoundaryMode::Truncated,
            Mode::Periodic => BoundaryMode::PeriodicLateral,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum, Serialize, Deserialize)]
enum Target {
    #[value(name = "gamma1N")]
    Gamma1N,
    #[value(name = "gamma2N")]
    Gamma2N,
}

impl Target {
    fn plate(self) -> Plate {
        match self {
            Target::Gamma1N => Plate::Top,
            Target::Gamma2N => Plate::Bottom,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the Dirichlet problem with data on Γ₁ᴰ.
    Forward {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        k: f64,
        #[arg(long, default_value = "zero")]
        q: String,
        #[arg(long)]
        dirichlet: PathBuf,
        #[arg(long, value_enum, default_value = "truncated")]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assemble a partial DN matrix on the source basis.
    Dnmap {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        k: f64,
        #[arg(long, default_value = "zero")]
        q: String,
        #[arg(long, default_value_t = 15)]
        basis_n: usize,
        #[arg(long, value_enum)]
        target: Target,
        #[arg(long, value_enum, default_value = "truncated")]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Star norm of the difference of two DN matrices written by `dnmap`.
    Dnnorm {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 15)]
        test_n: usize,
    },
    /// Build one CGO probe pair and report its diagnostics.
    CgoCheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = parse_vec3)]
        xi: [f64; 3],
        #[arg(long)]
        variant: Variant,
        #[arg(long)]
        param: f64,
        #[arg(long, default_value = "zero")]
        q1: String,
        #[arg(long, default_value = "zero")]
        q2: String,
        #[arg(long, default_value_t = 0.0)]
        k: f64,
    },
    /// Estimate the Fourier difference on the frequency set.
    Recover {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        q1: String,
        #[arg(long, default_value = "zero")]
        q2: String,
        #[arg(long, default_value_t = 0.0)]
        k: f64,
        #[arg(long)]
        variant: Variant,
        #[arg(long, default_value = "auto")]
        r: String,
        #[arg(long, default_value = "auto")]
        param: String,
        #[arg(long, default_value = "auto")]
        lambda: String,
        #[arg(long, default_value_t = 0.25)]
        spacing: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// DN-noise stability sweep.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        q1: String,
        #[arg(long, default_value = "zero")]
        q2: String,
        #[arg(long, default_value_t = 0.0)]
        k: f64,
        #[arg(long)]
        variant: Variant,
        #[arg(long, value_delimiter = ',')]
        noise: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 15)]
        basis_n: usize,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Empirical Carleman constant over random sine series.
    Carleman {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = parse_vec3, default_value = "0,0,1")]
        zeta: [f64; 3],
        #[arg(long, value_delimiter = ',', default_value = "1,1.5,2,3,4,6,8")]
        taus: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "periodic")]
        mode: Mode,
        #[arg(long, default_value_t = 0.0)]
        k: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the smooth bump potential used by the test suite on the configured grid.
    Bump {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        amp: f64,
        #[arg(long, value_enum, default_value = "truncated")]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a sine-mode Dirichlet datum on Γ₁ᴰ.
    Datum {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        a: usize,
        #[arg(long, default_value_t = 1)]
        b: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decay of |FT(q)| along rays.
    Rl {
        #[arg(long)]
        q: PathBuf,
        #[arg(long, default_value_t = 3)]
        rays: usize,
        #[arg(long, default_value_t = 4.0)]
        r_min: f64,
        #[arg(long, default_value_t = 40.0)]
        r_max: f64,
        #[arg(long, default_value_t = 12)]
        count: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_vec3(s: &str) -> std::result::Result<[f64; 3], String> {
    let v: Vec<f64> = s.split(',').map(|t| t.trim().parse::<f64>().map_err(|e| e.to_string())).collect::<std::result::Result<_, _>>()?;
    v.try_into().map_err(|_| format!("expected three comma-separated numbers, got {s:?}"))
}

/// Sidecar stored next to a DN matrix so `dnnorm` can rebuild the star norm.
#[derive(Serialize, Deserialize, PartialEq, Debug)]
struct DnSidecar {
    l: f64,
    r: f64,
    r_prime: f64,
    r_lat: f64,
    eps_cutoff: f64,
    target_h: f64,
    k: f64,
    basis_n: usize,
    target: Target,
    mode: Mode,
}

fn sidecar_path(p: &Path) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn grid_for(cfg: &GeometryConfig, mode: Mode) -> Result<Grid3> {
    Ok(match mode {
        Mode::Truncated => build_domain(&cfg.geom, cfg.target_h)?,
        Mode::Periodic => build_periodic_domain(&cfg.geom, cfg.target_h)?,
    })
}

fn load_potential(spec: &str, grid: &Grid3, geom: &SlabGeometry) -> Result<Potential> {
    if spec == "zero" {
        return Ok(Potential::zero(*grid));
    }
    let f = io::load_field(Path::new(spec)).with_context(|| format!("reading potential {spec}"))?;
    if !f.grid.same_nodes(grid) {
        bail!("potential {spec} is not sampled on the configured Ω grid");
    }
    Ok(Potential::with_measured_bound(f, geom, 2.0)?)
}

fn auto_or(s: &str, default: impl FnOnce() -> Result<f64>) -> Result<f64> {
    if s == "auto" {
        default()
    } else {
        s.parse().map_err(|_| anyhow!("expected a number or 'auto', got {s:?}"))
    }
}

fn fibonacci_rays(n: usize) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = if n == 1 { 1.0 } else { 1.0 - 2.0 * i as f64 / (n - 1) as f64 };
            let r = (1.0 - z * z).max(0.0).sqrt();
            let t = golden * i as f64;
            [r * t.cos(), r * t.sin(), z]
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Forward { config, k, q, dirichlet, mode, out } => {
            let cfg = GeometryConfig::load(&config)?;
            let grid = grid_for(&cfg, mode)?;
            let q = load_potential(&q, &grid, &cfg.geom)?;
            let op = HelmholtzOperator::new(&cfg.geom, &grid, k, Some(&q), mode.into())?;
            let f = io::load_boundary(&dirichlet, BoundaryPatch::dirichlet(&cfg.geom))?;
            let u = op.solve_dirichlet(&f)?;
            io::save_field(&out, &u)?;
        }
        Cmd::Dnmap { config, k, q, basis_n, target, mode, out } => {
            let cfg = GeometryConfig::load(&config)?;
            let grid = grid_for(&cfg, mode)?;
            let q = load_potential(&q, &grid, &cfg.geom)?;
            let op = HelmholtzOperator::new(&cfg.geom, &grid, k, Some(&q), mode.into())?;
            let basis = BoundaryBasis::source(&cfg.geom, &grid, basis_n)?;
            let dn = assemble_dn(&op, &basis, BoundaryPatch::neumann(&cfg.geom, target.plate()))?;
            io::save_matrix(&out, &dn.matrix)?;
            let g = cfg.geom;
            let side = DnSidecar {
                l: g.l,
                r: g.r,
                r_prime: g.r_prime,
                r_lat: g.r_lat,
                eps_cutoff: g.eps_cutoff,
                target_h: cfg.target_h,
                k,
                basis_n,
                target,
                mode,
            };
            std::fs::write(sidecar_path(&out), serde_json::to_string_pretty(&side)?)?;
        }
        Cmd::Dnnorm { a, b, test_n } => {
            let read_side = |p: &Path| -> Result<DnSidecar> {
                let text = std::fs::read_to_string(sidecar_path(p)).with_context(|| format!("sidecar of {}", p.display()))?;
                Ok(serde_json::from_str(&text)?)
            };
            let (sa, sb) = (read_side(&a)?, read_side(&b)?);
            if sa != sb {
                bail!("the two matrices were assembled with different settings");
            }
            let (ma, mb) = (io::load_matrix(&a)?, io::load_matrix(&b)?);
            if ma.shape() != mb.shape() {
                bail!("matrix shapes differ: {:?} vs {:?}", ma.shape(), mb.shape());
            }
            let geom = SlabGeometry::new(sa.l, sa.r, sa.r_prime, sa.r_lat, sa.eps_cutoff)?;
            let cfg = GeometryConfig { geom, target_h: sa.target_h };
            let grid = grid_for(&cfg, sa.mode)?;
            let ctx = DnContext::new(&geom, &grid, sa.k, sa.basis_n, sa.mode.into())?;
            let star = ctx.star(BoundaryPatch::neumann(&geom, sa.target.plate()), test_n)?;
            println!("{}", star.op_norm(&(ma - mb))?);
        }
        Cmd::CgoCheck { config, xi, variant, param, q1, q2, k } => {
            let cfg = GeometryConfig::load(&config)?;
            let grid = build_domain(&cfg.geom, cfg.target_h)?;
            let (q1, q2) = (load_potential(&q1, &grid, &cfg.geom)?, load_potential(&q2, &grid, &cfg.geom)?);
            let bx = commensurate_box(&cfg.geom, &grid, 0.5, 1)?;
            let ctx = RecoveryContext::new(&cfg.geom, &q1, &q2, &bx, k, variant, param)?;
            let pair = make_phase_pair(&make_frame(xi)?, variant, param)?;
            let probe = ctx.probe(xi)?;
            let rec = json!({
                "xi": xi,
                "variant": variant,
                "param": param,
                "isotropy_residual": pair.isotropy_residual(),
                "norm_residual": pair.norm_residual(),
                "psi1": probe.psi1.report,
                "psi2": probe.psi2.report,
                "gamma2_max_u1": probe.gamma2_max(1),
                "gamma2_max_u2": probe.gamma2_max(2),
            });
            println!("{rec}");
        }
        Cmd::Recover { config, q1, q2, k, variant, r, param, lambda, spacing, out } => {
            let cfg = GeometryConfig::load(&config)?;
            let grid = build_domain(&cfg.geom, cfg.target_h)?;
            let (q1, q2) = (load_potential(&q1, &grid, &cfg.geom)?, load_potential(&q2, &grid, &cfg.geom)?);
            let r = auto_or(&r, || Ok(3.0))?;
            let param = auto_or(&param, || Ok(8.0))?;
            let two = match lambda.as_str() {
                "auto" => recovery::fit_two_constants(&recovery::synthetic_family(2.0 * cfg.geom.r, 20, 1), 10.0, 1.05, 200)?,
                s => recovery::TwoConstants { lambda: s.parse().map_err(|_| anyhow!("bad --lambda {s:?}"))?, c0: 1.0 },
            };
            let bx = commensurate_box(&cfg.geom, &grid, 0.5, 1)?;
            let ctx = RecoveryContext::new(&cfg.geom, &q1, &q2, &bx, k, variant, param)?;
            let freqs = FrequencySet::new(r, spacing)?;
            let full = recovery::estimate_full(&ctx, &freqs, &ContinuationConfig::new(&cfg.geom, &two)?)?;
            for (xi, msg) in &full.failed {
                eprintln!("skipped ξ = {xi:?}: {msg}");
            }
            #[derive(Serialize)]
            struct Row {
                xi1: f64,
                xi2: f64,
                xi3: f64,
                re_est: f64,
                im_est: f64,
                re_true: f64,
                im_true: f64,
                abs_err: f64,
            }
            let mut rows: Vec<Row> = full
                .rows
                .iter()
                .map(|(x, e, t)| Row {
                    xi1: x[0],
                    xi2: x[1],
                    xi3: x[2],
                    re_est: e.re,
                    im_est: e.im,
                    re_true: t.re,
                    im_true: t.im,
                    abs_err: (e - t).norm(),
                })
                .collect();
            rows.sort_by(|a, b| [a.xi1, a.xi2, a.xi3].partial_cmp(&[b.xi1, b.xi2, b.xi3]).expect("finite ξ"));
            harness::write_csv(std::io::BufWriter::new(std::fs::File::create(&out)?), &rows)?;
            let sup = full.rows.iter().map(|r| r.1.norm()).fold(0.0, f64::max);
            let m = q1.bound_m.max(q2.bound_m);
            let cs = recovery::fit_sobolev_constant(&[q1.clone(), q2.clone()], 2.0)?;
            let b = recovery::assemble_bounds(sup, r, 2.0, m, cs);
            let rec = json!({
                "sup_bound": b.sup_bound,
                "hm1_bound": b.hm1_bound,
                "linf_bound": b.linf_bound,
                "sup_relative_error": recovery::sup_relative_error(&full.rows),
                "params": { "r": r, "param": param, "lambda": two.lambda, "c0": two.c0, "variant": variant, "k": k },
                "failed": full.failed.len(),
            });
            println!("{rec}");
        }
        Cmd::Sweep { config, q1, q2, k, variant, noise, trials, seed, basis_n, lambda, delta, out } => {
            let cfg = GeometryConfig::load(&config)?;
            let grid = build_domain(&cfg.geom, cfg.target_h)?;
            let (q1, q2) = (load_potential(&q1, &grid, &cfg.geom)?, load_potential(&q2, &grid, &cfg.geom)?);
            let ctx = DnContext::new(&cfg.geom, &grid, k, basis_n, BoundaryMode::Truncated)?;
            let m = q1.bound_m.max(q2.bound_m);
            let sc = SweepConfig {
                variant,
                noise_levels: noise,
                trials,
                seed,
                basis_n,
                test_n: basis_n,
                lambda,
                c: recovery::default_c(&cfg.geom),
                s: 2.0,
                bound_m: m,
                sobolev_constant: recovery::fit_sobolev_constant(&[q1.clone(), q2.clone()], 2.0)?,
                delta,
            };
            let res = harness::stability_sweep(&ctx, &q1, &q2, &sc)?;
            harness::write_csv(std::io::BufWriter::new(std::fs::File::create(&out)?), &res.records)?;
            println!("{}", json!({ "slope": res.slope, "theta_fit": res.theta_fit, "monotone": res.monotone, "base_star": res.base_star }));
        }
        Cmd::Carleman { config, zeta, taus, trials, seed, mode, k, out } => {
            let cfg = match config {
                Some(p) => GeometryConfig::load(&p)?,
                None => GeometryConfig { geom: SlabGeometry::reference(), target_h: 1.0 / 32.0 },
            };
            let grid = grid_for(&cfg, mode)?;
            let op = HelmholtzOperator::new(&cfg.geom, &grid, k, None, mode.into())?;
            let rep = harness::carleman_check(&op, zeta, &taus, trials, seed, CarlemanConfig::default())?;
            if let Some(p) = out {
                #[derive(Serialize)]
                struct Row {
                    tau: f64,
                    lhs_interior: f64,
                    lhs_boundary: f64,
                    rhs: f64,
                    sample_max: f64,
                    fitted_c: f64,
                }
                let rows: Vec<Row> = (0..rep.tau_list.len())
                    .map(|i| Row {
                        tau: rep.tau_list[i],
                        lhs_interior: rep.lhs_interior[i],
                        lhs_boundary: rep.lhs_boundary[i],
                        rhs: rep.rhs[i],
                        sample_max: rep.sample_max[i],
                        fitted_c: rep.fitted_c[i],
                    })
                    .collect();
                harness::write_csv(std::io::BufWriter::new(std::fs::File::create(&p)?), &rows)?;
            }
            println!("{}", serde_json::to_string(&rep)?);
        }
        Cmd::Bump { config, amp, mode, out } => {
            let cfg = GeometryConfig::load(&config)?;
            let grid = grid_for(&cfg, mode)?;
            io::save_field(&out, &bump_potential(&grid, &cfg.geom, amp)?.field)?;
        }
        Cmd::Datum { config, a, b, out } => {
            let cfg = GeometryConfig::load(&config)?;
            let g = cfg.geom;
            let square = PatchSquare::for_radius(g.r_prime, build_domain(&g, cfg.target_h)?.h);
            let w = square.half_width();
            let f = BoundaryField::from_fn(BoundaryPatch::dirichlet(&g), square, |x, y| {
                if x.hypot(y) >= g.r_prime {
                    return C64::new(0.0, 0.0);
                }
                let s = |m: usize, t: f64| (m as f64 * std::f64::consts::PI * (t + w) / (2.0 * w)).sin();
                C64::new(s(a, x) * s(b, y), 0.0)
            });
            io::write_boundary(std::io::BufWriter::new(std::fs::File::create(&out)?), &f)?;
        }
        Cmd::Rl { q, rays, r_min, r_max, count, out } => {
            let f = io::load_field(&q)?;
            let pot = Potential { field: f, support_check: false, sobolev_s: 2.0, bound_m: f64::INFINITY };
            let t = harness::rl_decay_measure(&pot, &fibonacci_rays(rays), r_min, r_max, count)?;
            if let Some(p) = out {
                harness::write_csv(std::io::BufWriter::new(std::fs::File::create(&p)?), &t.samples)?;
            }
            for (i, ray) in t.rays.iter().enumerate() {
                println!("{}", json!({ "ray": i, "direction": ray.direction, "p": ray.p }));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if matches!(e.downcast_ref::<Error>(), Some(Error::Inadmissible { .. })) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
