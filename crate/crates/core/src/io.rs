//! Binary snapshots and CSV output.
//!
//! A snapshot is a header of five little-endian 64-bit words (magic, version, `n` as
//! unsigned integers, then `L` and `t` as IEEE-754 doubles) followed by row-major
//! little-endian doubles for `rho, u_x, u_y`, then optionally `Pi`, then optionally
//! `U_x, U_y`. The field count is recovered from the file length: 3, 4 (`Pi`),
//! 5 (`U`) or 6 (`Pi` and `U`).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::grid::{Grid, ScalarField, VectorField};
use crate::{Error, Result};

pub const SNAPSHOT_MAGIC: u64 = 0x4F44_4446;
pub const SNAPSHOT_VERSION: u64 = 1;
pub const SNAPSHOT_EXTENSION: &str = "oddf";

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub rho: ScalarField,
    pub u: VectorField,
    pub pressure: Option<ScalarField>,
    pub big_u: Option<VectorField>,
}

impl Snapshot {
    pub fn new(t: f64, rho: ScalarField, u: VectorField) -> Self {
        Self { t, rho, u, pressure: None, big_u: None }
    }

    pub fn grid(&self) -> &Grid {
        self.rho.grid()
    }

    fn fields(&self) -> Vec<&ScalarField> {
        let mut out = vec![&self.rho, &self.u.x, &self.u.y];
        if let Some(p) = &self.pressure {
            out.push(p);
        }
        if let Some(v) = &self.big_u {
            out.push(&v.x);
            out.push(&v.y);
        }
        out
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let g = self.grid();
        let fields = self.fields();
        if fields.iter().any(|f| f.grid() != g) {
            return Err(Error::GridMismatch);
        }
        w.write_all(&SNAPSHOT_MAGIC.to_le_bytes())?;
        w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        w.write_all(&(g.n() as u64).to_le_bytes())?;
        w.write_all(&g.length().to_le_bytes())?;
        w.write_all(&self.t.to_le_bytes())?;
        for f in fields {
            for v in f.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() < 40 || bytes.len() % 8 != 0 {
            return Err(Error::Snapshot(format!("truncated file of {} bytes", bytes.len())));
        }
        let word = |i: usize| -> [u8; 8] { bytes[8 * i..8 * i + 8].try_into().expect("8 bytes") };
        let magic = u64::from_le_bytes(word(0));
        if magic != SNAPSHOT_MAGIC {
            return Err(Error::Snapshot(format!("bad magic {magic:#x}")));
        }
        let version = u64::from_le_bytes(word(1));
        if version != SNAPSHOT_VERSION {
            return Err(Error::Snapshot(format!("unsupported version {version}")));
        }
        let n = u64::from_le_bytes(word(2)) as usize;
        let length = f64::from_le_bytes(word(3));
        let t = f64::from_le_bytes(word(4));
        let grid = Grid::new(n, length).map_err(|e| Error::Snapshot(e.to_string()))?;
        let body = bytes.len() / 8 - 5;
        let size = grid.size();
        if body % size != 0 || !(3..=6).contains(&(body / size)) {
            return Err(Error::Snapshot(format!("{body} values do not form 3 to 6 fields of {size}")));
        }
        let count = body / size;
        let field = |k: usize| -> Result<ScalarField> {
            let start = 5 + k * size;
            let values = (start..start + size).map(|i| f64::from_le_bytes(word(i))).collect();
            ScalarField::from_values(&grid, values)
        };
        let rho = field(0)?;
        let u = VectorField::new(field(1)?, field(2)?);
        let (pressure, big_u) = match count {
            3 => (None, None),
            4 => (Some(field(3)?), None),
            5 => (None, Some(VectorField::new(field(3)?, field(4)?))),
            _ => (Some(field(3)?), Some(VectorField::new(field(4)?, field(5)?))),
        };
        Ok(Self { t, rho, u, pressure, big_u })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// `snap_<k>.oddf` with a zero-padded index so lexical order is time order.
pub fn snapshot_name(k: usize) -> String {
    format!("snap_{k:06}.{SNAPSHOT_EXTENSION}")
}

/// Snapshot files of a directory, sorted by name.
pub fn list_snapshots(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == SNAPSHOT_EXTENSION))
        .collect();
    out.sort();
    Ok(out)
}

/// Formats a float for CSV with full round-trip precision.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.17e}")
}

/// Writes a CSV file from a header and pre-formatted rows.
pub fn write_csv(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{header}")?;
    for row in rows {
        writeln!(w, "{row}")?;
    }
    w.flush()?;
    Ok(())
}

/// One documented output table.
#[derive(Debug, Clone, Copy)]
pub struct CsvSchema {
    pub file: &'static str,
    pub description: &'static str,
    pub columns: &'static [(&'static str, &'static str)],
}

impl CsvSchema {
    pub fn header(&self) -> String {
        self.columns.iter().map(|c| c.0).collect::<Vec<_>>().join(",")
    }
}

pub const DIAG_SCHEMA: CsvSchema = CsvSchema {
    file: "diag.csv",
    description: "one row per output step of a simulation",
    columns: &[
        ("t", "simulation time"),
        ("E_u", "||sqrt(rho) u||_2"),
        ("E_U", "||sqrt(rho) U||_2 with U the carried or effective velocity"),
        ("div_u_max", "max |div u| on the grid"),
        ("div_U_max", "max |div U| on the grid"),
        ("elsasser_residual", "||U_carried - (u - grad^perp g(rho))||_2, zero unless U is carried"),
        ("rho_min", "min rho"),
        ("rho_max", "max rho"),
        ("rho_mean", "mean rho"),
        ("pde_residual", "L2 norm of the momentum equation with a re-solved pressure"),
        ("pressure_iters", "elliptic iterations of the last step"),
        ("steps", "accepted time steps so far"),
    ],
};

pub const LP_SCHEMA: CsvSchema = CsvSchema {
    file: "lp.csv",
    description: "dyadic analysis in long format, one value per row; empty cells are not applicable",
    columns: &[
        ("source", "snapshot file name, or 'trajectory' for time-space norms"),
        ("t", "snapshot time, or final time for trajectory rows"),
        ("field", "rho, u or U"),
        ("quantity", "block_l2, block_sup, sobolev, besov, chemin_lerner, time_besov, interpolation_lhs, interpolation_rhs"),
        ("j", "block index for block rows"),
        ("s", "regularity index"),
        ("q", "time exponent for trajectory rows"),
        ("value", "norm value"),
        ("approximate", "1 when the value is a grid maximum standing in for an L^inf norm"),
    ],
};

pub const STABILITY_SCHEMA: CsvSchema = CsvSchema {
    file: "stability.csv",
    description: "twin-run stability samples, one row per sample and perturbation size",
    columns: &[
        ("delta", "initial perturbation size ||(drho, du)(0)||_2"),
        ("t", "sample time"),
        ("D", "||(drho, du, dU)(t)||_2^2"),
        ("I", "indicator ||grad rho||_inf + ||grad u||_inf + ||grad U||_inf + ||grad Pi||_inf of the reference run"),
        ("envelope", "C exp(C int_0^t I) D(0) with the common fitted C"),
    ],
};

pub const PICARD_SCHEMA: CsvSchema = CsvSchema {
    file: "picard.csv",
    description: "one row per Picard iterate",
    columns: &[
        ("n", "iterate index"),
        ("d_n", "sup_t ||u^n - u^(n-1)||_2 + sup_t ||rho^n - rho^(n-1)||_2"),
        ("residual_n", "sup over interior nodes of the PDE residual of iterate n"),
    ],
};

pub const EPS_SCHEMA: CsvSchema = CsvSchema {
    file: "eps.csv",
    description: "epsilon sweep against the unregularized run",
    columns: &[
        ("epsilon", "regularization parameter"),
        ("t", "comparison time"),
        ("error_u", "||u_eps(t) - u_0(t)||_2"),
    ],
};

pub const COMPARE_SCHEMA: CsvSchema = CsvSchema {
    file: "compare.csv",
    description: "original against reduced formulation at each output step",
    columns: &[
        ("t", "sample time"),
        ("du_l2", "||u_orig - u_red||_2"),
        ("drho_l2", "||rho_orig - rho_red||_2"),
        ("dgrad_pi_l2", "||grad pi_orig - grad(Pi + f(rho) omega)||_2 on the original state"),
    ],
};

pub const CONVERGENCE_SCHEMA: CsvSchema = CsvSchema {
    file: "elsasser.csv",
    description: "carried-velocity constraint residual at the final time against dt",
    columns: &[
        ("dt", "time step"),
        ("t", "final time"),
        ("elsasser_residual", "||U_carried - (u - grad^perp g(rho))||_2"),
    ],
};

pub const VERIFY_SCHEMA: CsvSchema = CsvSchema {
    file: "verify.csv",
    description: "property checks run by the verify command",
    columns: &[
        ("check", "property name"),
        ("value", "measured value"),
        ("bound", "threshold"),
        ("pass", "1 when the property holds"),
    ],
};

pub const ALL_SCHEMAS: &[CsvSchema] =
    &[DIAG_SCHEMA, LP_SCHEMA, STABILITY_SCHEMA, PICARD_SCHEMA, EPS_SCHEMA, COMPARE_SCHEMA, CONVERGENCE_SCHEMA, VERIFY_SCHEMA];

/// Column reference as plain text, used by the command-line help.
pub fn schema_text() -> String {
    let mut out = String::new();
    for s in ALL_SCHEMAS {
        out.push_str(&format!("{} ({}):\n", s.file, s.description));
        for (name, desc) in s.columns {
            out.push_str(&format!("  {name:<18} {desc}\n"));
        }
    }
    out
}

/// Column reference as JSON, the content of the shipped schema file.
pub fn schema_json() -> String {
    let tables: Vec<serde_json::Value> = ALL_SCHEMAS
        .iter()
        .map(|s| {
            serde_json::json!({
                "file": s.file,
                "description": s.description,
                "columns": s.columns.iter().map(|(n, d)| serde_json::json!({"name": n, "description": d})).collect::<Vec<_>>(),
            })
        })
        .collect();
    let doc = serde_json::json!({
        "snapshot": {
            "extension": SNAPSHOT_EXTENSION,
            "header": ["magic u64 = 0x4F444446", "version u64 = 1", "n u64", "L f64", "t f64"],
            "fields": ["rho", "u_x", "u_y", "Pi (optional)", "U_x (optional)", "U_y (optional)"],
            "layout": "little-endian f64, row-major values[row * n + col] at (x, y) = (col h, row h)",
        },
        "tables": tables,
    });
    serde_json::to_string_pretty(&doc).expect("static schema serializes") + "\n"
}
