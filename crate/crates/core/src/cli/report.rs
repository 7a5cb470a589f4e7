//! Result rows and their CSV form.

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "schedule,value,route,alpha,stderr,rho,c_value,censored,runtime_ms";

/// One `(schedule, value, route)` outcome. A refused row has no α and
/// carries its reason code in the stderr column.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub schedule: String,
    pub value: f64,
    pub route: String,
    pub alpha: Option<f64>,
    pub stderr: Option<f64>,
    pub refusal: Option<String>,
    pub rho: Option<f64>,
    pub c_value: Option<f64>,
    pub censored: Option<usize>,
    pub runtime_ms: Option<u128>,
}

impl ResultRow {
    pub fn new(schedule: &str, value: f64, route: &str) -> Self {
        Self {
            schedule: schedule.to_string(),
            value,
            route: route.to_string(),
            alpha: None,
            stderr: None,
            refusal: None,
            rho: None,
            c_value: None,
            censored: None,
            runtime_ms: None,
        }
    }

    pub fn is_refused(&self) -> bool {
        self.refusal.is_some()
    }

    pub fn to_csv_line(&self) -> String {
        fn num(v: Option<f64>) -> String {
            v.filter(|x| x.is_finite()).map(|x| x.to_string()).unwrap_or_default()
        }
        let stderr = match &self.refusal {
            Some(code) => code.clone(),
            None => num(self.stderr),
        };
        [
            self.schedule.clone(),
            self.value.to_string(),
            self.route.clone(),
            num(self.alpha),
            stderr,
            num(self.rho),
            num(self.c_value),
            self.censored.map(|c| c.to_string()).unwrap_or_default(),
            self.runtime_ms.map(|t| t.to_string()).unwrap_or_default(),
        ]
        .join(",")
    }

    pub fn from_csv_line(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(Error::Format(format!("expected 9 fields, got {}", f.len())));
        }
        let num = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| Error::Format(format!("bad number {s:?}")))
            }
        };
        let alpha = num(f[3])?;
        let (stderr, refusal) = match (alpha, f[4].parse::<f64>()) {
            (None, Err(_)) if !f[4].is_empty() => (None, Some(f[4].to_string())),
            _ => (num(f[4])?, None),
        };
        Ok(Self {
            schedule: f[0].to_string(),
            value: f[1].parse().map_err(|_| Error::Format(format!("bad value {:?}", f[1])))?,
            route: f[2].to_string(),
            alpha,
            stderr,
            refusal,
            rho: num(f[5])?,
            c_value: num(f[6])?,
            censored: if f[7].is_empty() {
                None
            } else {
                Some(f[7].parse().map_err(|_| Error::Format(format!("bad count {:?}", f[7])))?)
            },
            runtime_ms: if f[8].is_empty() {
                None
            } else {
                Some(f[8].parse().map_err(|_| Error::Format(format!("bad runtime {:?}", f[8])))?)
            },
        })
    }
}

/// Full CSV text. A `# TAILSCOPE_TOL=` line is written only when the
/// environment override is active.
pub fn render_csv(rows: &[ResultRow], tol_override: Option<f64>) -> String {
    let mut out = String::new();
    if let Some(t) = tol_override {
        out.push_str(&format!("# TAILSCOPE_TOL={t}\n"));
    }
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        _ => return Err(Error::Format("missing result CSV header".into())),
    }
    lines.map(ResultRow::from_csv_line).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_round_trip() {
        let mut ok = ResultRow::new("cyclic", 0.45, "kernel");
        ok.alpha = Some(2.0000000000000004);
        ok.stderr = Some(0.0);
        ok.rho = Some(-0.125);
        ok.c_value = Some(1.5);
        let mut refused = ResultRow::new("constant", 0.1, "kernel");
        refused.refusal = Some("rho_nonnegative".into());
        let text = render_csv(&[ok.clone(), refused.clone()], None);
        assert!(text.starts_with(CSV_HEADER));
        assert!(text.contains("\nconstant,0.1,kernel,,rho_nonnegative,,,,\n"));
        assert_eq!(parse_csv(&text).unwrap(), vec![ok, refused]);
    }

    #[test]
    fn tolerance_header_only_when_overridden() {
        assert!(!render_csv(&[], None).contains("TAILSCOPE_TOL"));
        assert!(render_csv(&[], Some(1e-4)).starts_with("# TAILSCOPE_TOL=0.0001\n"));
    }
}
