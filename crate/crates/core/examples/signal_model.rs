//! Builds one HRIS sounding window and checks the stacked linear operators
//! against the instance-by-instance forward model.
//!
//! cargo run --example signal_model

use hris::hris_model::{make_schedule, Connectivity, RhoPolicy, ScheduleMode};
use hris::numkernel::{numerical_rank, rel_err, vec, RANK_REL_TOL};
use hris::scenario::{draw_channels, sample_geometry, GainNormalization, LinkGains, SeededRng, SystemDims, SystemGeometry};
use hris::sounding::{gen_pilots, simulate, NoiseModel};

fn main() -> hris::Result<()> {
    let dims = SystemDims::new(4, 16, 4, 3, 12)?;
    let geometry = SystemGeometry::default();
    let mut rng = SeededRng::new(7, 0);

    let drop = sample_geometry(&dims, &geometry, &mut rng);
    let gains = LinkGains::from_drop(&drop, &geometry, GainNormalization::Absolute)?;
    println!("d_H = {:.1} m, beta = {:.3e}", drop.d_h, gains.beta);
    for (k, (d, g)) in drop.d_users.iter().zip(&gains.gamma).enumerate() {
        println!("user {k}: d = {d:.1} m, gamma = {g:.3e}");
    }

    let schedule = make_schedule(&dims, ScheduleMode::Random, &RhoPolicy::Uniform(0.5), Connectivity::Full, &mut rng)?;
    let pilots = gen_pilots(dims.k, dims.tau)?;
    let channels = draw_channels(&dims, &gains, &mut rng)?;
    let rec = simulate(&schedule, &pilots, &channels, &NoiseModel::noiseless(), &mut rng)?;

    // y_RC = A_RC vec(G) and Y_BS = H A_BSᵀ when σ² = 0 and P_t = 1.
    let y_rc = &rec.a_rc * vec(channels.g.as_ref());
    let y_bs = &channels.h * rec.a_bs.transpose();
    println!("A_RC: {}x{}, rank {}", rec.a_rc.nrows(), rec.a_rc.ncols(), numerical_rank(rec.a_rc.as_ref(), RANK_REL_TOL)?);
    println!("A_BS: {}x{}, rank {}", rec.a_bs.nrows(), rec.a_bs.ncols(), numerical_rank(rec.a_bs.as_ref(), RANK_REL_TOL)?);
    println!("HRIS operator mismatch: {:.2e}", rel_err(y_rc.as_mat(), rec.y_rc.as_mat()));
    println!("BS operator mismatch:   {:.2e}", rel_err(y_bs.as_ref(), rec.y_bs_matrix().as_ref()));
    Ok(())
}
