//! CSV formats for snapshots, event logs, ensemble moments, error tables and
//! density tables. Every writer starts with `#`-prefixed header lines given
//! by the caller (provenance), followed by a column header row.

use std::io::{Read, Write};

use crate::engine::Trajectory;
use crate::meanfield::{ConvergenceRow, RadiusDensity, WeightedMeasure};
use crate::model::{EventRecord, Individual};
use crate::observables::EnsembleSeries;

pub type IoResult<T> = std::result::Result<T, csv::Error>;

/// Full-precision decimal rendering (17 significant digits, lossless).
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn with_header<W: Write>(mut w: W, header: &[String], columns: &[&str]) -> IoResult<csv::Writer<W>> {
    for line in header {
        writeln!(w, "# {line}")?;
    }
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(columns)?;
    Ok(out)
}

/// `id,px,py,r`, one row per individual.
pub fn write_snapshot<W: Write>(w: W, header: &[String], xs: &[Individual]) -> IoResult<()> {
    let mut out = with_header(w, header, &["id", "px", "py", "r"])?;
    for x in xs {
        out.write_record([x.id.to_string(), num(x.p[0]), num(x.p[1]), num(x.r)])?;
    }
    out.flush()?;
    Ok(())
}

/// Parses the [`write_snapshot`] format; `#` lines are skipped.
pub fn read_snapshot<R: Read>(r: R) -> IoResult<Vec<Individual>> {
    let mut rd = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(r);
    let mut out = Vec::new();
    for rec in rd.deserialize::<(u64, f64, f64, f64)>() {
        let (id, px, py, r) = rec?;
        out.push(Individual { id, p: [px, py], r });
    }
    Ok(out)
}

/// `k,t,kind,subject_id,partner_id,N_after`; `partner_id` is empty except
/// for competition proposals.
pub fn write_events<W: Write>(w: W, header: &[String], events: &[EventRecord]) -> IoResult<()> {
    let mut out = with_header(
        w,
        header,
        &["k", "t", "kind", "subject_id", "partner_id", "N_after"],
    )?;
    for e in events {
        out.write_record([
            e.k.to_string(),
            num(e.time),
            e.kind.as_str().to_string(),
            e.subject_id.to_string(),
            e.partner_id.map(|p| p.to_string()).unwrap_or_default(),
            e.n_after.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// `t,mean,var,stderr` per snapshot time.
pub fn write_moments<W: Write>(w: W, header: &[String], series: &EnsembleSeries) -> IoResult<()> {
    let mut out = with_header(w, header, &["t", "mean", "var", "stderr"])?;
    for (t, m) in series.times.iter().zip(&series.moments) {
        out.write_record([num(*t), num(m.mean), num(m.variance()), num(m.stderr())])?;
    }
    out.flush()?;
    Ok(())
}

/// `k,f,mean_sup_error,stderr,replicas`.
pub fn write_error_table<W: Write>(w: W, header: &[String], rows: &[ConvergenceRow]) -> IoResult<()> {
    let mut out = with_header(w, header, &["k", "f", "mean_sup_error", "stderr", "replicas"])?;
    for r in rows {
        out.write_record([
            r.k.to_string(),
            r.f.clone(),
            num(r.mean_sup_error),
            num(r.stderr),
            r.replicas.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// `t,r,n` with `r` the cell centers.
pub fn write_density<W: Write>(
    w: W,
    header: &[String],
    table: &[(f64, RadiusDensity)],
) -> IoResult<()> {
    let mut out = with_header(w, header, &["t", "r", "n"])?;
    for (t, d) in table {
        for (i, v) in d.n.iter().enumerate() {
            let r = if d.r_max > d.r_min { d.center(i) } else { d.r_min };
            out.write_record([num(*t), num(r), num(*v)])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `t,px,py,r,w`, one row per particle and output time.
pub fn write_particles<W: Write>(
    w: W,
    header: &[String],
    table: &[(f64, WeightedMeasure)],
) -> IoResult<()> {
    let mut out = with_header(w, header, &["t", "px", "py", "r", "w"])?;
    for (t, m) in table {
        for q in &m.particles {
            out.write_record([num(*t), num(q.p[0]), num(q.p[1]), num(q.r), num(q.w)])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `t,mass,mean_radius` summary of a solver run.
pub fn write_mass_series<W: Write>(
    w: W,
    header: &[String],
    rows: &[(f64, f64, f64)],
) -> IoResult<()> {
    let mut out = with_header(w, header, &["t", "mass", "mean_radius"])?;
    for &(t, m, r) in rows {
        out.write_record([num(t), num(m), num(r)])?;
    }
    out.flush()?;
    Ok(())
}

/// Event log of a recorded trajectory.
pub fn write_trajectory_events<W: Write>(w: W, header: &[String], traj: &Trajectory) -> IoResult<()> {
    write_events(w, header, &traj.events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EventKind;

    #[test]
    fn snapshot_round_trip() {
        let xs = vec![
            Individual { id: 3, p: [0.1, 9.999999999], r: 0.123456789012345 },
            Individual { id: 7, p: [5.0, 1.0 / 3.0], r: 0.05 },
        ];
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &["tool test".into()], &xs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# tool test\nid,px,py,r\n"));
        assert_eq!(read_snapshot(&buf[..]).unwrap(), xs);
    }

    #[test]
    fn event_rows() {
        let e = EventRecord {
            k: 1,
            time: 0.5,
            kind: EventKind::RejectedCdeath,
            subject_id: 4,
            partner_id: Some(9),
            newborn: None,
            n_after: 12,
        };
        let f = EventRecord {
            kind: EventKind::Birth,
            partner_id: None,
            ..e
        };
        let mut buf = Vec::new();
        write_events(&mut buf, &[], &[e, f]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,t,kind,subject_id,partner_id,N_after");
        assert!(lines[1].ends_with(",rejected_cdeath,4,9,12"));
        assert!(lines[2].ends_with(",birth,4,,12"));
    }
}
