//! Two-phase least-squares estimation of every cascaded channel through a
//! purely reflective RIS, at and above its structural pilot minimum.
//!
//! cargo run --release --example reflective_baseline

use hris::estimation::{baseline_reflective_cascaded, nmse, true_cascaded, BaselinePlan};
use hris::scenario::{draw_channels, LinkGains, SeededRng, SystemDims};
use hris::sounding::{gen_pilots, NoiseModel};

fn main() -> hris::Result<()> {
    let dims = SystemDims::reference(100);
    let min = BaselinePlan::min_pilots(dims.n, dims.m, dims.k);
    println!("structural minimum: {min} pilots");
    let channels = draw_channels(&dims, &LinkGains::uniform(dims.k, 1.0, 1.0), &mut SeededRng::new(3, 0))?;
    let truth = true_cascaded(&channels);
    for (tau, snr_db) in [(min, None), (100, None), (100, Some(30.0)), (100, Some(10.0))] {
        let noise = snr_db.map(NoiseModel::from_snr_db).unwrap_or_else(NoiseModel::noiseless);
        let pilots = gen_pilots(dims.k, tau)?;
        let est = baseline_reflective_cascaded(&channels, &pilots, tau, &mut SeededRng::new(3, 1), &noise)?;
        let worst = est
            .c_hat
            .iter()
            .zip(&truth)
            .map(|(e, t)| nmse(e.as_ref(), t.as_ref()))
            .collect::<hris::Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        let label = snr_db.map(|s| format!("{s} dB")).unwrap_or_else(|| "noiseless".into());
        println!(
            "tau = {tau:>3} ({} + {}x{}), {label:>9}: worst per-user NMSE {worst:.3e}",
            est.plan.phase1_len,
            dims.k - 1,
            est.plan.phase2_len
        );
    }
    Ok(())
}
