//! Dataset files: one row per bus per frame.
//!
//! CSV header: `t,bus,V,I,theta,delta,P,Q,label,attack_type`. `bus` is the
//! 1-based bus index. The JSON-lines form carries one object per row with
//! the same field names. Consecutive rows sharing `(t, label,
//! attack_type)` with bus indices 1..N form one frame.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{AttackType, Label, MeasurementFrame, CHANNELS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct FrameRow {
    pub t: usize,
    pub bus: usize,
    pub V: f64,
    pub I: f64,
    pub theta: f64,
    pub delta: f64,
    pub P: f64,
    pub Q: f64,
    pub label: Label,
    pub attack_type: AttackType,
}

fn rows(frames: &[MeasurementFrame]) -> impl Iterator<Item = FrameRow> + '_ {
    frames.iter().flat_map(|f| {
        f.buses.iter().enumerate().map(move |(i, b)| FrameRow {
            t: f.t,
            bus: i + 1,
            V: b[0],
            I: b[1],
            theta: b[2],
            delta: b[3],
            P: b[4],
            Q: b[5],
            label: f.label,
            attack_type: f.attack_type,
        })
    })
}

fn assemble(rows: impl Iterator<Item = Result<FrameRow>>) -> Result<Vec<MeasurementFrame>> {
    let mut frames: Vec<MeasurementFrame> = Vec::new();
    for (n, row) in rows.enumerate() {
        let row = row?;
        let values: [f64; CHANNELS] = [row.V, row.I, row.theta, row.delta, row.P, row.Q];
        let continues = frames.last().is_some_and(|f| {
            f.t == row.t && f.label == row.label && f.attack_type == row.attack_type && row.bus == f.buses.len() + 1
        });
        if continues {
            frames.last_mut().unwrap().buses.push(values);
        } else if row.bus == 1 {
            frames.push(MeasurementFrame { t: row.t, buses: vec![values], label: row.label, attack_type: row.attack_type });
        } else {
            return Err(Error::Dataset(format!("row {}: bus {} out of sequence", n + 1, row.bus)));
        }
    }
    if let Some(first) = frames.first() {
        let n = first.buses.len();
        if let Some(bad) = frames.iter().find(|f| f.buses.len() != n) {
            return Err(Error::Dataset(format!("frame t={} has {} buses, expected {n}", bad.t, bad.buses.len())));
        }
    }
    Ok(frames)
}

pub fn write_csv<W: Write>(frames: &[MeasurementFrame], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for row in rows(frames) {
        wtr.serialize(row).map_err(|e| Error::Dataset(e.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(r: R) -> Result<Vec<MeasurementFrame>> {
    let mut rdr = csv::Reader::from_reader(r);
    assemble(rdr.deserialize::<FrameRow>().map(|r| r.map_err(|e| Error::Dataset(e.to_string()))))
}

pub fn write_jsonl<W: Write>(frames: &[MeasurementFrame], mut w: W) -> Result<()> {
    for row in rows(frames) {
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<MeasurementFrame>> {
    assemble(r.lines().filter(|l| !matches!(l, Ok(s) if s.trim().is_empty())).map(|l| {
        let l = l?;
        Ok(serde_json::from_str::<FrameRow>(&l)?)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame_strategy() -> impl Strategy<Value = Vec<MeasurementFrame>> {
        (1usize..6, 1usize..4).prop_flat_map(|(nb, nf)| {
            proptest::collection::vec(
                (
                    0usize..1000,
                    proptest::collection::vec(proptest::array::uniform6(-1e3f64..1e3), nb),
                    prop_oneof![
                        Just((Label::Benign, AttackType::None)),
                        Just((Label::Attacked, AttackType::Random)),
                        Just((Label::Attacked, AttackType::Lr)),
                    ],
                ),
                nf,
            )
            .prop_map(|v| {
                v.into_iter()
                    .map(|(t, buses, (label, attack_type))| MeasurementFrame { t, buses, label, attack_type })
                    .collect()
            })
        })
    }

    proptest! {
        #[test]
        fn csv_round_trip(frames in frame_strategy()) {
            let mut buf = Vec::new();
            write_csv(&frames, &mut buf).unwrap();
            prop_assert_eq!(read_csv(&buf[..]).unwrap(), frames);
        }

        #[test]
        fn jsonl_round_trip(frames in frame_strategy()) {
            let mut buf = Vec::new();
            write_jsonl(&frames, &mut buf).unwrap();
            prop_assert_eq!(read_jsonl(&buf[..]).unwrap(), frames);
        }
    }

    #[test]
    fn csv_header_matches_documented_columns() {
        let f = MeasurementFrame { t: 0, buses: vec![[1.0; 6]], label: Label::Benign, attack_type: AttackType::None };
        let mut buf = Vec::new();
        write_csv(&[f], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t,bus,V,I,theta,delta,P,Q,label,attack_type");
        assert_eq!(text.lines().nth(1).unwrap(), "0,1,1.0,1.0,1.0,1.0,1.0,1.0,benign,none");
    }

    #[test]
    fn out_of_sequence_bus_rejected() {
        let text = "t,bus,V,I,theta,delta,P,Q,label,attack_type\n0,2,1,1,0,0,0,0,benign,none\n";
        assert!(read_csv(text.as_bytes()).is_err());
    }
}
