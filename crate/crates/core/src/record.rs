//! Line-oriented trajectory log.
//!
//! Each record is a single JSON object on one line. Floats use the shortest
//! decimal rendering that parses back to the same `f64`, so a log replays
//! bit-for-bit. Key names are listed in `FORMATS.md`.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::types::{validate_trajectory, TrajectoryRecord};

pub fn encode_record(record: &TrajectoryRecord) -> Result<String> {
    validate_trajectory(&record.trajectory)
        .map_err(|v| Error::InvalidTrajectory(v.to_string()))?;
    serde_json::to_string(record).map_err(|e| Error::Record(e.to_string()))
}

pub fn decode_record(line: &str) -> Result<TrajectoryRecord> {
    let record: TrajectoryRecord =
        serde_json::from_str(line.trim_end()).map_err(|e| Error::Record(e.to_string()))?;
    validate_trajectory(&record.trajectory)
        .map_err(|v| Error::InvalidTrajectory(v.to_string()))?;
    Ok(record)
}

pub fn write_records<'a, W, I>(mut out: W, records: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a TrajectoryRecord>,
{
    for record in records {
        writeln!(out, "{}", encode_record(record)?)?;
    }
    Ok(())
}

/// Reads every nonblank line of a log.
pub fn read_records<R: BufRead>(input: R) -> Result<Vec<TrajectoryRecord>> {
    let mut records = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = decode_record(&line)
            .map_err(|e| Error::Record(format!("line {}: {e}", lineno + 1)))?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Trajectory;
    use proptest::prelude::*;

    fn record(response: Vec<u32>, logprobs: Vec<f64>, entropies: Vec<f64>) -> TrajectoryRecord {
        TrajectoryRecord {
            step: 3,
            snapshot_id: 2,
            trajectory: Trajectory {
                prompt_id: 11,
                response,
                logprobs,
                entropies,
                reward: 1.0,
                truncated: false,
            },
            positions: None,
        }
    }

    #[test]
    fn single_line_round_trip() {
        let r = record(vec![1, 2], vec![-0.5, -0.25], vec![0.1, 0.2]);
        let line = encode_record(&r).unwrap();
        assert!(!line.contains('\n'));
        assert!(line.contains("\"response\":[1,2]"));
        assert!(line.contains("\"reward\":1"));
        assert_eq!(decode_record(&line).unwrap(), r);
    }

    #[test]
    fn empty_response_is_rejected() {
        let r = record(vec![], vec![], vec![]);
        assert!(matches!(encode_record(&r), Err(Error::InvalidTrajectory(_))));
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn ln_half_survives_exactly() {
        let r = record(vec![0], vec![-0.6931471805599453], vec![0.6931471805599453]);
        let back = decode_record(&encode_record(&r).unwrap()).unwrap();
        assert_eq!(back.trajectory.logprobs[0].to_bits(), (-0.6931471805599453f64).to_bits());
    }

    #[test]
    fn positions_extension_is_optional() {
        let mut r = record(vec![1, 0, 1], vec![-0.1; 3], vec![0.3; 3]);
        r.positions = Some(vec![1, 2]);
        let back = decode_record(&encode_record(&r).unwrap()).unwrap();
        assert_eq!(back.positions, Some(vec![1, 2]));
    }

    #[test]
    fn decode_rejects_invalid_reward() {
        let line = r#"{"step":0,"snapshot_id":0,"prompt_id":1,"response":[1],"logprobs":[-0.1],"entropies":[0.1],"reward":0.5,"truncated":false}"#;
        assert!(decode_record(line).is_err());
    }

    #[test]
    fn thousand_random_records_round_trip_bitwise() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let len = rng.gen_range(1..20);
            let response = (0..len).map(|_| rng.gen_range(0..50)).collect();
            let logprobs: Vec<f64> = (0..len).map(|_| -rng.gen::<f64>() * 10.0).collect();
            let entropies: Vec<f64> = (0..len).map(|_| rng.gen::<f64>() * 3.0).collect();
            let mut r = record(response, logprobs, entropies);
            r.trajectory.reward = rng.gen_range(0..2) as f64;
            let line = encode_record(&r).unwrap();
            let back = decode_record(&line).unwrap();
            for (a, b) in r.trajectory.logprobs.iter().zip(&back.trajectory.logprobs) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
            assert_eq!(back, r);
        }
    }

    proptest! {
        #[test]
        fn encoding_is_idempotent(
            tokens in prop::collection::vec(0u32..100, 1..16),
            seed in any::<u64>(),
            reward in 0u8..2,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = tokens.len();
            let mut r = record(
                tokens,
                (0..n).map(|_| -rng.gen::<f64>() * 1e3).collect(),
                (0..n).map(|_| rng.gen::<f64>() * 1e-3).collect(),
            );
            r.trajectory.reward = reward as f64;
            let first = encode_record(&r).unwrap();
            let second = encode_record(&decode_record(&first).unwrap()).unwrap();
            prop_assert_eq!(first, second);
        }
    }
}
