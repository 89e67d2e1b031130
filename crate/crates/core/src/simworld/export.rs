use super::Trajectory;
use crate::evalkit::BitMask;
use std::fmt::Write;

pub const TRAJECTORY_COLUMNS: [&str; 14] = [
    "t",
    "x",
    "y",
    "psi",
    "v",
    "steering",
    "accel",
    "intention",
    "phase",
    "D_o",
    "O_C",
    "O_L",
    "O_R",
    "event",
];

/// One row per tick. Floats use the shortest representation that parses back
/// to the same value; clear lanes print `inf`.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut out = TRAJECTORY_COLUMNS.join(",");
    out.push('\n');
    for tick in &traj.ticks {
        let v = &tick.world.vehicle;
        let m = &tick.measurements;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            tick.t,
            v.x,
            v.y,
            v.psi,
            v.v,
            tick.steering,
            tick.accel,
            tick.intention,
            tick.phase.as_str(),
            tick.d_o,
            m.o_c,
            m.o_l,
            m.o_r,
            tick.event_label()
        )
        .expect("writing to a String");
    }
    out
}

/// Binary PGM (P5), 255 for set pixels.
pub fn write_pgm(mask: &BitMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.pixels().iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::{run_scenario, ScenarioConfig, TeacherController};

    #[test]
    fn csv_has_header_and_one_row_per_tick() {
        let cfg = ScenarioConfig {
            horizon: 1.0,
            ..ScenarioConfig::default()
        };
        let traj = run_scenario(&cfg, &mut TeacherController::new(cfg.teacher)).unwrap();
        let csv = trajectory_csv(&traj);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "t,x,y,psi,v,steering,accel,intention,phase,D_o,O_C,O_L,O_R,event"
        );
        assert_eq!(lines.len(), 1 + traj.ticks.len());
        assert!(lines[1].starts_with("0,0,5.25,0,"));
        assert!(lines.iter().all(|l| l.split(',').count() == 14));
    }

    #[test]
    fn pgm_layout() {
        let mut m = BitMask::new(3, 2);
        m.set(1, 1, true);
        let bytes = write_pgm(&m);
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[0, 0, 0, 0, 255, 0]);
    }
}
