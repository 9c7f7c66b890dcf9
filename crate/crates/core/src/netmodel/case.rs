//! Plain-text case format.
//!
//! ```text
//! # comment
//! NAME case14
//! BASEMVA 100
//! BUS
//! # bus_i type Pd Qd Gs Bs area Vm [Va baseKV zone Vmax Vmin]
//! GEN
//! # bus Pg Qg Qmax Qmin Vg mBase status [Pmax Pmin]
//! BRANCH
//! # fbus tbus r x b [rateA rateB rateC ratio angle status]
//! ```
//!
//! Column order is the MATPOWER layout. Powers are MW/MVAr, impedances
//! per-unit, angles in degrees. Bracketed trailing columns are optional.
//! Bus type 3 is the slack, type 2 a generator (PV) bus, type 1 a load bus.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{Branch, Bus, BusKind, PowerNetwork};
use crate::error::{Error, Result};

/// Bundled cases as `(name, contents)`.
pub const BUNDLED_CASES: &[(&str, &str)] = &[
    ("case14", include_str!("../../cases/case14.case")),
    ("case30", include_str!("../../cases/case30.case")),
    ("case_ieee30", include_str!("../../cases/case_ieee30.case")),
    ("case39", include_str!("../../cases/case39.case")),
    ("case57", include_str!("../../cases/case57.case")),
    ("case118", include_str!("../../cases/case118.case")),
    ("case_illinois200", include_str!("../../cases/case_illinois200.case")),
];

/// Loads a bundled case by name. `case200` and `ieee30` are accepted as aliases.
pub fn bundled_case(name: &str) -> Result<PowerNetwork> {
    let key = match name {
        "case200" | "illinois200" => "case_illinois200",
        "ieee30" | "case_IEEE30" => "case_ieee30",
        other => other,
    };
    let (_, text) = BUNDLED_CASES
        .iter()
        .find(|(n, _)| *n == key)
        .ok_or_else(|| Error::Config(format!("no bundled case named {name:?}")))?;
    parse_case_str(text, Path::new(key))
}

pub fn parse_case(path: &Path) -> Result<PowerNetwork> {
    let text = std::fs::read_to_string(path)?;
    parse_case_str(&text, path)
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Bus,
    Gen,
    Branch,
}

struct RawBus {
    number: u32,
    ty: u8,
    pd: f64,
    qd: f64,
    gs: f64,
    bs: f64,
    vm: f64,
}

struct RawGen {
    bus: usize,
    pg: f64,
    vg: f64,
    pmax: f64,
}

/// Parses case text. `path` is only used in error messages.
pub fn parse_case_str(text: &str, path: &Path) -> Result<PowerNetwork> {
    let err = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };

    let mut name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut base_mva = 100.0;
    let mut section = Section::None;
    let mut raw_buses: Vec<RawBus> = Vec::new();
    let mut index: HashMap<u32, usize> = HashMap::new();
    let mut gens: Vec<RawGen> = Vec::new();
    let mut branches: Vec<Branch> = Vec::new();

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let head = tokens.next().unwrap();
        match head.to_ascii_uppercase().as_str() {
            "NAME" => {
                name = tokens.collect::<Vec<_>>().join(" ");
                continue;
            }
            "BASEMVA" => {
                let v = tokens.next().ok_or_else(|| err(lineno, "BASEMVA needs a value".into()))?;
                base_mva = v.parse().map_err(|_| err(lineno, format!("bad BASEMVA value {v:?}")))?;
                continue;
            }
            "BUS" => {
                section = Section::Bus;
                continue;
            }
            "GEN" => {
                section = Section::Gen;
                continue;
            }
            "BRANCH" => {
                section = Section::Branch;
                continue;
            }
            _ => {}
        }

        let cols: Vec<f64> = content
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| err(lineno, format!("not a number: {t:?}"))))
            .collect::<Result<_>>()?;
        let need = |min: usize, what: &str| {
            if cols.len() < min {
                Err(err(lineno, format!("{what} row needs at least {min} columns, found {}", cols.len())))
            } else {
                Ok(())
            }
        };
        let bus_ref = |v: f64| -> Result<usize> {
            let number = as_id(v).ok_or_else(|| err(lineno, format!("bad bus number {v}")))?;
            index
                .get(&number)
                .copied()
                .ok_or_else(|| err(lineno, format!("unknown bus {number}")))
        };

        match section {
            Section::None => return Err(err(lineno, format!("data before any section header: {head:?}"))),
            Section::Bus => {
                need(8, "BUS")?;
                let number = as_id(cols[0]).ok_or_else(|| err(lineno, format!("bad bus number {}", cols[0])))?;
                let ty = cols[1];
                if ![1.0, 2.0, 3.0].contains(&ty) {
                    return Err(err(lineno, format!("unsupported bus type {ty}")));
                }
                if index.insert(number, raw_buses.len()).is_some() {
                    return Err(Error::Validation(format!("duplicate bus number {number} (line {lineno})")));
                }
                raw_buses.push(RawBus {
                    number,
                    ty: ty as u8,
                    pd: cols[2],
                    qd: cols[3],
                    gs: cols[4],
                    bs: cols[5],
                    vm: cols[7],
                });
            }
            Section::Gen => {
                need(8, "GEN")?;
                let bus = bus_ref(cols[0])?;
                if cols[7] <= 0.0 {
                    continue;
                }
                gens.push(RawGen {
                    bus,
                    pg: cols[1],
                    vg: cols[5],
                    pmax: cols.get(8).copied().unwrap_or(cols[1].max(0.0)),
                });
            }
            Section::Branch => {
                need(5, "BRANCH")?;
                let from = bus_ref(cols[0])?;
                let to = bus_ref(cols[1])?;
                if cols.get(10).copied().unwrap_or(1.0) <= 0.0 {
                    continue;
                }
                let ratio = cols.get(8).copied().unwrap_or(0.0);
                if from == to {
                    return Err(err(lineno, "branch connects a bus to itself".into()));
                }
                if cols[2] == 0.0 && cols[3] == 0.0 {
                    return Err(err(lineno, "branch has zero series impedance".into()));
                }
                branches.push(Branch {
                    from,
                    to,
                    r: cols[2],
                    x: cols[3],
                    b_shunt: cols[4],
                    tap: if ratio == 0.0 { 1.0 } else { ratio },
                    shift: cols.get(9).copied().unwrap_or(0.0).to_radians(),
                });
            }
        }
    }

    if raw_buses.is_empty() {
        return Err(Error::Validation(format!("{}: no BUS rows", path.display())));
    }

    let mut buses: Vec<Bus> = raw_buses
        .iter()
        .enumerate()
        .map(|(i, rb)| Bus {
            id: i,
            number: rb.number,
            kind: match rb.ty {
                3 => BusKind::Slack,
                2 => BusKind::Generator,
                _ => BusKind::Load,
            },
            base_load_p: rb.pd / base_mva,
            base_load_q: rb.qd / base_mva,
            gen_capacity: 0.0,
            gen_p: 0.0,
            voltage_setpoint: rb.vm,
            shunt_g: rb.gs / base_mva,
            shunt_b: rb.bs / base_mva,
        })
        .collect();

    let mut has_gen = vec![false; buses.len()];
    for g in &gens {
        let b = &mut buses[g.bus];
        if !has_gen[g.bus] {
            b.voltage_setpoint = g.vg;
            has_gen[g.bus] = true;
        }
        b.gen_capacity += g.pmax / base_mva;
        b.gen_p += g.pg / base_mva;
    }
    for (b, &gen) in buses.iter_mut().zip(&has_gen) {
        // A PV bus without an in-service unit cannot hold its voltage.
        if b.kind == BusKind::Generator && !gen {
            b.kind = BusKind::Load;
        }
        if b.kind == BusKind::Load {
            b.voltage_setpoint = 1.0;
        }
    }

    PowerNetwork::new(name, base_mva, buses, branches)
}

fn as_id(v: f64) -> Option<u32> {
    (v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64).then_some(v as u32)
}

/// Writes a network back to the case format. Each generator bus gets one
/// aggregated GEN row.
pub fn serialize_case(net: &PowerNetwork) -> String {
    let base = net.base_mva;
    let mut out = String::new();
    let _ = writeln!(out, "NAME {}", net.name);
    let _ = writeln!(out, "BASEMVA {base}");
    out.push_str("\nBUS\n# bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin\n");
    for b in &net.buses {
        let ty = match b.kind {
            BusKind::Slack => 3,
            BusKind::Generator => 2,
            BusKind::Load => 1,
        };
        let _ = writeln!(
            out,
            "{} {ty} {} {} {} {} 1 {} 0 0 1 1.1 0.9",
            b.number,
            b.base_load_p * base,
            b.base_load_q * base,
            b.shunt_g * base,
            b.shunt_b * base,
            b.voltage_setpoint
        );
    }
    out.push_str("\nGEN\n# bus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin\n");
    for b in net.buses.iter().filter(|b| b.is_generator()) {
        let _ = writeln!(
            out,
            "{} {} 0 9999 -9999 {} {base} 1 {} 0",
            b.number,
            b.gen_p * base,
            b.voltage_setpoint,
            b.gen_capacity * base
        );
    }
    out.push_str("\nBRANCH\n# fbus tbus r x b rateA rateB rateC ratio angle status\n");
    for br in &net.branches {
        let ratio = if br.tap == 1.0 { 0.0 } else { br.tap };
        let _ = writeln!(
            out,
            "{} {} {} {} {} 0 0 0 {} {} 1",
            net.buses[br.from].number,
            net.buses[br.to].number,
            br.r,
            br.x,
            br.b_shunt,
            ratio,
            br.shift.to_degrees()
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = "\
# two-bus test case
BASEMVA 100
BUS
1 3 0 0 0 0 1 1.0
2 1 50 10 0 0 1 1.0
GEN
1 0 0 100 -100 1.0 100 1 200 0
BRANCH
1 2 0.01 0.1 0
";

    fn parse(text: &str) -> Result<PowerNetwork> {
        parse_case_str(text, Path::new("test.case"))
    }

    #[test]
    fn two_bus_file() {
        let net = parse(TWO_BUS).unwrap();
        assert_eq!(net.n_buses(), 2);
        assert_eq!(net.branches.len(), 1);
        assert!(net.adjacency()[0][1]);
        assert_eq!(net.buses[0].kind, BusKind::Slack);
        assert_eq!(net.buses[1].kind, BusKind::Load);
        assert!((net.buses[1].base_load_p - 0.5).abs() < 1e-15);
        assert!((net.buses[0].gen_capacity - 2.0).abs() < 1e-15);
    }

    #[test]
    fn two_slack_rejected() {
        let text = TWO_BUS.replace("2 1 50 10", "2 3 50 10");
        assert!(matches!(parse(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn no_slack_rejected() {
        let text = TWO_BUS.replace("1 3 0 0", "1 1 0 0");
        assert!(matches!(parse(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn duplicate_bus_rejected() {
        let text = TWO_BUS.replace("2 1 50 10", "1 1 50 10");
        assert!(matches!(parse(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = TWO_BUS.replace("0.01 0.1 0", "0.01 zz 0");
        match parse(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 9),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn short_row_rejected() {
        let text = TWO_BUS.replace("2 1 50 10 0 0 1 1.0", "2 1 50");
        assert!(matches!(parse(&text), Err(Error::Parse { line: 5, .. })));
    }

    #[test]
    fn every_bundled_case_loads() {
        for (name, _) in BUNDLED_CASES {
            let net = bundled_case(name).unwrap();
            assert!(net.n_buses() >= 14, "{name}");
        }
        assert_eq!(bundled_case("case200").unwrap().n_buses(), 200);
    }

    #[test]
    fn case14_counts_match_file() {
        let text = BUNDLED_CASES[0].1;
        let mut section = "";
        let mut rows = HashMap::new();
        for line in text.lines() {
            let l = line.trim();
            if l.is_empty() || l.starts_with('#') || l.starts_with("NAME") || l.starts_with("BASEMVA") {
                continue;
            }
            if ["BUS", "GEN", "BRANCH"].contains(&l) {
                section = if l == "BUS" { "bus" } else if l == "GEN" { "gen" } else { "branch" };
                continue;
            }
            *rows.entry(section).or_insert(0) += 1;
        }
        let net = bundled_case("case14").unwrap();
        assert_eq!(net.n_buses(), 14);
        assert_eq!(net.n_buses(), rows["bus"]);
        assert_eq!(net.branches.len(), rows["branch"]);
        assert_eq!(net.generator_buses().len(), rows["gen"]);
    }
}
