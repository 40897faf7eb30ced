use nlskam::lattice::*;
use nlskam::model::*;
use nlskam::series::*;
use nlskam::testing::desk_sites;
use nlskam::toeplitz::*;

fn main() {
    let spec = ModelSpec {
        sites: desk_sites(),
        nonlinearity: NonlinearitySpec::new(vec![(1, 1, 0.05)]).unwrap(),
        xi: vec![0.317, 0.259],
        sigma: vec![0.431, 0.127],
        amp_u: vec![0.1, 0.1],
        amp_v: vec![0.1, 0.1],
        degree_cap: 4,
    };
    let h = build_hamiltonian(&spec).unwrap();
    let (_, p) = action_angle_reduce(&h, &spec).unwrap();
    let dp = DomainParams::new(0.5, 0.2, 0.4).unwrap();
    let rep = check_toeplitz(&p, &dp, 1e-4, 6, 3).unwrap();
    for c in &rep.classes {
        println!("{}: viol {:.3e} rays {} witness {:?}", c.class.label(), c.max_violation, c.rays_checked, c.witness);
    }
    // inspect the worst witness
    let worst = rep.classes.iter().max_by(|a, b| a.max_violation.partial_cmp(&b.max_violation).unwrap()).unwrap();
    if let Some((n, m, c, t)) = &worst.witness {
        println!("class {:?} n={n:?} m={m:?} c={c:?} t={t}", worst.class);
        let d1 = ray_second_derivative(&p, worst.class, n, m, c, *t).unwrap();
        // find t_ref
        let sites = p.sites();
        let ts: Vec<i32> = (-6..=6).filter(|&tt| sites.in_window(&n.add(&c.scaled(tt))) && sites.in_window(&m.add(&c.scaled(worst.class.second_shift() * tt)))).collect();
        let t_ref = *ts.iter().max_by_key(|t| (t.abs(), **t)).unwrap();
        let dref = ray_second_derivative(&p, worst.class, n, m, c, t_ref).unwrap();
        println!("t={} : {} terms; t_ref={} : {} terms", t, d1.len(), t_ref, dref.len());
        for (mm, cc) in d1.terms().take(8) { println!("  t   {:?} -> {cc}", mm); }
        for (mm, cc) in dref.terms().take(8) { println!("  ref {:?} -> {cc}", mm); }
    }
}
