use mrtss::protocol::{results_csv, ComputeResult, RESULT_COLUMNS};
use mrtss::simulate::{write_report_csv, ScenarioReport};

/// Left-aligned columns separated by two spaces.
fn align(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: &mut dyn Iterator<Item = &str>| {
        let joined: Vec<String> = cells.zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        joined.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(&mut header.iter().copied());
    for row in rows {
        out += &line(&mut row.iter().map(String::as_str));
    }
    out
}

/// Renders one compute result. Table output drops empty columns and lists
/// warnings underneath; CSV and JSON carry them inline.
pub fn result(r: &ComputeResult, format: crate::args::Format) -> String {
    use crate::args::Format;
    match format {
        Format::Json => r.to_json() + "\n",
        Format::Csv => results_csv(std::slice::from_ref(r), None),
        Format::Table => {
            let row = r.row();
            let warnings_col = RESULT_COLUMNS.len() - 1;
            let keep: Vec<usize> = (0..warnings_col).filter(|&i| !row[i].is_empty()).collect();
            let header: Vec<&str> = keep.iter().map(|&i| RESULT_COLUMNS[i]).collect();
            let cells: Vec<String> = keep.iter().map(|&i| row[i].clone()).collect();
            let mut out = align(&header, &[cells]);
            let warnings = match r {
                ComputeResult::SampleSize(s) => &s.warnings,
                ComputeResult::Power(p) => &p.warnings,
            };
            for w in warnings {
                out += &format!("warning [{}]: {}\n", w.code, w.message);
            }
            out
        }
    }
}

pub fn reports_table(reports: &[ScenarioReport]) -> String {
    let mut buf = Vec::new();
    write_report_csv(&mut buf, reports).expect("in-memory write");
    let text = String::from_utf8(buf).expect("numeric CSV");
    let mut lines = text.lines().map(|l| l.split(',').map(str::to_string).collect::<Vec<_>>());
    let header = lines.next().unwrap_or_default();
    let rows: Vec<Vec<String>> = lines.collect();
    align(&header.iter().map(String::as_str).collect::<Vec<_>>(), &rows)
}
