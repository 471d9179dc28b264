use kacrice_core::critical::{self, TcOptions};
use kacrice_core::loss::PhaseRetrievalLoss;
use kacrice_core::minima::{self, MinimaMode, SolverOptions};
use kacrice_core::{bbp, mp};
use std::time::Instant;

fn main() {
    let loss = PhaseRetrievalLoss::new(0.01);
    let sopts = SolverOptions::default();
    let topts = TcOptions::default();

    // TC at q=0.4 near the trivialization, and q=0 at large alpha
    for (q, alpha) in [(0.4, 4.0), (0.4, 4.5), (0.4, 4.6), (0.4, 5.0), (0.0, 6.5), (0.0, 20.0)] {
        let t0 = Instant::now();
        match critical::complexity_tc(&loss, q, alpha, None, None, &topts) {
            Ok(s) => println!(
                "TC q={q} alpha={alpha}: sigma={:.6e} e*={:.4} g=({:.4},{:.4}) iters={} {:?}",
                s.sigma, s.e_resolved, s.vars.g_re, s.vars.g_im, s.iters, t0.elapsed()
            ),
            Err(e) => println!("TC q={q} alpha={alpha} FAILED: {e}"),
        }
    }

    // bound chain at (q=0, alpha=5)
    let t0 = Instant::now();
    let s_t0 = minima::complexity(&loss, 0.0, 5.0, None, MinimaMode::Tilde0, None, &sopts).unwrap();
    let s_fin = minima::complexity(&loss, 0.0, 5.0, None, MinimaMode::Fin, None, &sopts).unwrap();
    let s_tc = critical::complexity_tc(&loss, 0.0, 5.0, None, None, &topts).unwrap();
    println!("chain q=0 a=5: tilde0={:.6e} fin={:.6e} tc={:.6e} ({:?})", s_t0.sigma, s_fin.sigma, s_tc.sigma, t0.elapsed());

    // BBP functionals for typical minima
    for alpha in [2.5, 4.0, 6.5] {
        let t0 = Instant::now();
        let sol = minima::complexity(&loss, 0.0, alpha, None, MinimaMode::Tilde0, None, &sopts).unwrap();
        let law = sol.frozen_law(&loss, &sopts.quad).unwrap();
        let edge = mp::left_edge(&law, alpha).unwrap();
        let r = bbp::analyze(&law, alpha).unwrap();
        println!("BBP typ q=0 alpha={alpha}: d_alpha={:.5} w_min={:.5} w*={:?} | edge g_min={:.6} sol.g={:.6} |x_min - t|={:.2e} ({:?})",
            r.d_alpha, r.w_min, r.w_star, edge.g_min, sol.outer.g, (edge.x_min - sol.t_nu).abs(), t0.elapsed());
    }
}
