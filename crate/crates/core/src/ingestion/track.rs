use crate::error::{Error, Result};

use super::seconds_to_frame;

fn parse_value(field: &str) -> Option<f64> {
    let f = field.trim();
    // Praat exports unvoiced frames as --undefined--.
    if f.is_empty() || f == "--undefined--" {
        return Some(0.0);
    }
    f.parse().ok()
}

/// Read a `time_seconds,value` track and resample it to the frame grid.
///
/// Each frame takes the value of the nearest row (ties to the earlier row).
/// Frames farther than one frame shift from any row are gaps and get `0.0`.
/// A first row whose time does not parse is treated as a header.
pub fn read_track_csv(text: &str, frame_shift_ms: f64) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());

    let mut rows: Vec<(f64, f64)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::parse(row, e.to_string()))?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() < 2 {
            return Err(Error::parse(row, "expected two columns: time,value"));
        }
        let time: f64 = match record[0].parse() {
            Ok(t) => t,
            Err(_) if i == 0 => continue,
            Err(_) => return Err(Error::parse(row, format!("bad time {:?}", &record[0]))),
        };
        if !time.is_finite() || time < 0.0 {
            return Err(Error::parse(row, format!("time {time} must be finite and non-negative")));
        }
        let value = parse_value(&record[1]).ok_or_else(|| Error::parse(row, format!("bad value {:?}", &record[1])))?;
        if let Some(&(prev, _)) = rows.last() {
            if time <= prev {
                return Err(Error::parse(row, format!("time {time} is not after previous time {prev}")));
            }
        }
        rows.push((time, value));
    }

    let Some(&(last, _)) = rows.last() else {
        return Ok(Vec::new());
    };
    let shift_s = frame_shift_ms / 1000.0;
    let frames = seconds_to_frame(last, frame_shift_ms) + 1;
    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        let t = f as f64 * shift_s;
        let k = rows.partition_point(|&(rt, _)| rt < t);
        let mut best: Option<(f64, f64)> = None;
        for cand in [k.checked_sub(1), Some(k)].into_iter().flatten() {
            if let Some(&(rt, v)) = rows.get(cand) {
                let d = (rt - t).abs();
                // Candidates are visited earlier-first, so strict < keeps ties early.
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, v));
                }
            }
        }
        let value = match best {
            Some((d, v)) if d <= shift_s + 1e-9 => v,
            _ => 0.0,
        };
        out.push(value);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_on_grid_pass_through() {
        let v = read_track_csv("0.00,100\n0.01,110\n0.02,120\n", 10.0).unwrap();
        assert_eq!(v, vec![100.0, 110.0, 120.0]);
    }

    #[test]
    fn middle_frame_takes_nearest_neighbor() {
        // Frame 1 (0.010 s) is equidistant; ties go to the earlier row.
        let v = read_track_csv("0.000,100\n0.020,200\n", 10.0).unwrap();
        assert_eq!(v, vec![100.0, 100.0, 200.0]);
        let v = read_track_csv("0.000,100\n0.014,200\n", 10.0).unwrap();
        assert_eq!(v, vec![100.0, 200.0]);
    }

    #[test]
    fn empty_input_gives_empty_track() {
        assert!(read_track_csv("", 10.0).unwrap().is_empty());
        assert!(read_track_csv("time,value\n", 10.0).unwrap().is_empty());
    }

    #[test]
    fn gaps_are_unvoiced() {
        let v = read_track_csv("0.00,100\n0.05,150\n", 10.0).unwrap();
        assert_eq!(v, vec![100.0, 100.0, 0.0, 0.0, 150.0, 150.0]);
    }

    #[test]
    fn header_and_undefined_values() {
        let v = read_track_csv("time,f0\n0.00,--undefined--\n0.01,123.5\n", 10.0).unwrap();
        assert_eq!(v, vec![0.0, 123.5]);
    }

    #[test]
    fn non_monotone_time_names_the_row() {
        let err = read_track_csv("0.00,1\n0.02,2\n0.01,3\n", 10.0).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }
}
