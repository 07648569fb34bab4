//! Comma-separated tables with a header row.

use std::io::{Read, Write};
use std::path::Path;

use lsvcal_core::quotes::GeneratedQuote;
use lsvcal_core::{LsvError, OptionQuote, Payoff, RepricingRow, Result, TraceEntry};

fn csv_err(e: csv::Error) -> LsvError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => LsvError::Io(io),
        kind => LsvError::Parse {
            line,
            message: format!("{kind:?}"),
        },
    }
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(csv_err)
}

/// Shortest round-trip representation.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn kind_of(p: &Payoff) -> &'static str {
    p.kind_name()
}

const QUOTE_HEADER: [&str; 6] = ["kind", "strike", "maturity", "price", "log_strike", "input_iv"];

pub fn write_generated(path: &Path, quotes: &[GeneratedQuote]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(QUOTE_HEADER).map_err(csv_err)?;
    for g in quotes {
        let q = &g.quote;
        w.write_record([
            kind_of(&q.payoff).to_string(),
            opt(q.strike()),
            num(q.maturity),
            num(q.price),
            num(g.log_strike),
            num(g.implied_vol),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `kind,strike,maturity,price`; further columns are ignored.
pub fn read_quotes(path: &Path) -> Result<Vec<OptionQuote>> {
    read_quotes_from(std::fs::File::open(path)?)
}

pub fn read_quotes_from(r: impl Read) -> Result<Vec<OptionQuote>> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header = rd.headers().map_err(csv_err)?.clone();
    let col = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| LsvError::Parse {
            line: 1,
            message: format!("missing column '{name}'"),
        })
    };
    let (ck, cs, ct, cp) = (col("kind")?, col("strike")?, col("maturity")?, col("price")?);
    let mut quotes = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |c: usize, name: &str| -> Result<f64> {
            let s = rec.get(c).unwrap_or("");
            s.parse::<f64>().map_err(|_| LsvError::Parse {
                line,
                message: format!("{name} '{s}' is not a number"),
            })
        };
        let strike = field(cs, "strike")?;
        let maturity = field(ct, "maturity")?;
        let price = field(cp, "price")?;
        let q = match rec.get(ck).unwrap_or("") {
            "call" => OptionQuote::call(strike, maturity, price),
            "put" => OptionQuote::put(strike, maturity, price),
            other => {
                return Err(LsvError::Parse {
                    line,
                    message: format!("unknown option kind '{other}'"),
                })
            }
        };
        quotes.push(q);
    }
    Ok(quotes)
}

pub fn write_repricing(path: &Path, rows: &[RepricingRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "quote",
        "kind",
        "maturity",
        "strike",
        "market_price",
        "model_price",
        "price_error",
        "input_iv",
        "model_iv",
        "iv_error",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.quote.to_string(),
            r.kind.clone(),
            num(r.maturity),
            opt(r.strike),
            num(r.market_price),
            num(r.model_price),
            num(r.price_error()),
            opt(r.input_iv),
            opt(r.model_iv),
            opt(r.iv_error()),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Parsed row of a repricing table.
#[derive(Debug, Clone, PartialEq)]
pub struct RepricingRecord {
    pub maturity: f64,
    pub strike: f64,
    pub input_iv: Option<f64>,
    pub model_iv: Option<f64>,
}

pub fn read_repricing(path: &Path) -> Result<Vec<RepricingRecord>> {
    let mut rd = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let get = |c: usize| -> Result<Option<f64>> {
            match rec.get(c).unwrap_or("") {
                "" => Ok(None),
                s => s.parse().map(Some).map_err(|_| LsvError::Parse {
                    line,
                    message: format!("bad number '{s}'"),
                }),
            }
        };
        let (Some(maturity), Some(strike)) = (get(2)?, get(3)?) else {
            continue;
        };
        out.push(RepricingRecord {
            maturity,
            strike,
            input_iv: get(7)?,
            model_iv: get(8)?,
        });
    }
    Ok(out)
}

pub fn write_trace(path: &Path, trace: &[TraceEntry]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["iteration", "objective", "grad_norm", "step", "kind"]).map_err(csv_err)?;
    for t in trace {
        let kind = match t.kind {
            lsvcal_core::calibrator::StepKind::Start => "start",
            lsvcal_core::calibrator::StepKind::LineSearch => "line-search",
            lsvcal_core::calibrator::StepKind::Fallback => "fallback",
        };
        w.write_record([t.iteration.to_string(), num(t.objective), num(t.grad_norm), num(t.step), kind.into()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_lambda(path: &Path, lambda: &[f64]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["quote", "lambda"]).map_err(csv_err)?;
    for (n, l) in lambda.iter().enumerate() {
        w.write_record([n.to_string(), num(*l)]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Rows of strings under a header, for report files.
pub fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quotes_parse() {
        let text = "kind,strike,maturity,price\ncall,100,0.5,6.25\nput, 90 ,1.0,2.5\n";
        let q = read_quotes_from(text.as_bytes()).unwrap();
        assert_eq!(q, vec![OptionQuote::call(100.0, 0.5, 6.25), OptionQuote::put(90.0, 1.0, 2.5)]);
    }

    #[test]
    fn bad_number_names_line() {
        let text = "kind,strike,maturity,price\ncall,100,0.5,6.25\ncall,abc,0.5,1\n";
        match read_quotes_from(text.as_bytes()) {
            Err(LsvError::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("abc"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ragged_row_names_line() {
        let text = "kind,strike,maturity,price\ncall,100,0.5,6.25\ncall,100\n";
        assert!(matches!(read_quotes_from(text.as_bytes()), Err(LsvError::Parse { line: 3, .. })));
    }

    #[test]
    fn missing_column() {
        let text = "kind,strike,price\ncall,100,6.25\n";
        assert!(matches!(read_quotes_from(text.as_bytes()), Err(LsvError::Parse { line: 1, .. })));
    }
}
