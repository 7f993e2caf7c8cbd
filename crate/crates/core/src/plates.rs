//! Thin dispersive plates: Sellmeier index, absorption, and per-order
//! phase/amplitude screens.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use crate::error::{RamanError, Result};
use crate::propagation::{LossRecord, Screen};
use crate::spectrum::{photon_density, FieldState, ModeLadder};
use crate::units::wrap_phase;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Ordinary,
    Extraordinary,
}

impl Axis {
    pub fn orthogonal(self) -> Axis {
        match self {
            Axis::Ordinary => Axis::Extraordinary,
            Axis::Extraordinary => Axis::Ordinary,
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = RamanError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "o" | "ordinary" => Ok(Axis::Ordinary),
            "e" | "extraordinary" => Ok(Axis::Extraordinary),
            other => Err(RamanError::Config(format!("unknown axis '{other}'"))),
        }
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Axis::Ordinary => "ordinary",
            Axis::Extraordinary => "extraordinary",
        })
    }
}

/// Intensity attenuation of a plate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Absorption {
    /// Same intensity transmission for every plate, independent of
    /// thickness; wavelengths above `transparent_above_nm` pass unattenuated.
    PerPlate {
        intensity_transmission: f64,
        #[serde(default)]
        transparent_above_nm: Option<f64>,
    },
    /// α(λ) in 1/m, linearly interpolated and clamped at the table ends.
    Table { wavelength_nm: Vec<f64>, alpha_per_m: Vec<f64> },
}

impl Absorption {
    /// Intensity transmission 15 identical plates need to lose 15% in total.
    pub fn default_per_plate() -> Self {
        Absorption::PerPlate {
            intensity_transmission: 0.85f64.powf(1.0 / 15.0),
            transparent_above_nm: None,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Absorption::PerPlate { intensity_transmission: t, .. } => {
                if !(t.is_finite() && *t > 0.0 && *t <= 1.0) {
                    return Err(RamanError::Config(format!("plate transmission {t} outside (0, 1]")));
                }
            }
            Absorption::Table { wavelength_nm, alpha_per_m } => {
                if wavelength_nm.len() != alpha_per_m.len() || wavelength_nm.is_empty() {
                    return Err(RamanError::Config("absorption table columns differ in length".into()));
                }
                if wavelength_nm.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(RamanError::Config("absorption wavelengths must increase".into()));
                }
                if alpha_per_m.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
                    return Err(RamanError::Config("absorption must be >= 0".into()));
                }
            }
        }
        Ok(())
    }

    /// Intensity transmission of a plate of `thickness` (m) at `wavelength_nm`.
    pub fn intensity_transmission(&self, wavelength_nm: f64, thickness: f64) -> f64 {
        match self {
            Absorption::PerPlate {
                intensity_transmission,
                transparent_above_nm,
            } => {
                if thickness > 0.0 && transparent_above_nm.map_or(true, |edge| wavelength_nm <= edge) {
                    *intensity_transmission
                } else {
                    1.0
                }
            }
            Absorption::Table { wavelength_nm: x, alpha_per_m: y } => {
                let alpha = interpolate(x, y, wavelength_nm);
                (-alpha * thickness).exp()
            }
        }
    }
}

fn interpolate(x: &[f64], y: &[f64], at: f64) -> f64 {
    if at <= x[0] {
        return y[0];
    }
    if at >= x[x.len() - 1] {
        return y[y.len() - 1];
    }
    let k = x.partition_point(|v| *v <= at);
    let (x0, x1, y0, y1) = (x[k - 1], x[k], y[k - 1], y[k]);
    y0 + (y1 - y0) * (at - x0) / (x1 - x0)
}

/// One index curve n(λ)² = 1 + Σ Bᵢλ²/(λ² − Cᵢ), λ in μm, plus absorption.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialDispersion {
    pub name: String,
    pub sellmeier_b: Vec<f64>,
    pub sellmeier_c_um2: Vec<f64>,
    pub range_nm: (f64, f64),
    pub absorption: Absorption,
}

impl MaterialDispersion {
    pub fn validate(&self) -> Result<()> {
        if self.sellmeier_b.len() != self.sellmeier_c_um2.len() {
            return Err(RamanError::Config(format!(
                "{}: {} B terms but {} C terms",
                self.name,
                self.sellmeier_b.len(),
                self.sellmeier_c_um2.len()
            )));
        }
        if !(self.range_nm.0 > 0.0 && self.range_nm.1 > self.range_nm.0) {
            return Err(RamanError::Config(format!("{}: bad wavelength range", self.name)));
        }
        self.absorption.validate()
    }

    /// Vacuum: n = 1 everywhere.
    pub fn vacuum() -> Self {
        MaterialDispersion {
            name: "vacuum".into(),
            sellmeier_b: Vec::new(),
            sellmeier_c_um2: Vec::new(),
            range_nm: (1e-3, 1e12),
            absorption: Absorption::PerPlate {
                intensity_transmission: 1.0,
                transparent_above_nm: None,
            },
        }
    }

    fn check_range(&self, wavelength_nm: f64) -> Result<()> {
        if wavelength_nm < self.range_nm.0 || wavelength_nm > self.range_nm.1 {
            return Err(RamanError::WavelengthOutOfRange {
                material: self.name.clone(),
                wavelength_nm,
                min_nm: self.range_nm.0,
                max_nm: self.range_nm.1,
            });
        }
        Ok(())
    }

    /// Refractive index at `wavelength` (m).
    pub fn refractive_index(&self, wavelength: f64) -> Result<f64> {
        let nm = wavelength * 1e9;
        self.check_range(nm)?;
        let l2 = (wavelength * 1e6).powi(2);
        let n2 = 1.0
            + self
                .sellmeier_b
                .iter()
                .zip(&self.sellmeier_c_um2)
                .map(|(b, c)| b * l2 / (l2 - c))
                .sum::<f64>();
        if !(n2 > 0.0 && n2.is_finite()) {
            return Err(RamanError::Config(format!(
                "{}: index undefined at {nm} nm",
                self.name
            )));
        }
        Ok(n2.sqrt())
    }

    /// Phase 2π n d/λ picked up by order wavelength `wavelength` (m) in a plate of `thickness`.
    pub fn phase(&self, wavelength: f64, thickness: f64) -> Result<f64> {
        Ok(2.0 * PI * self.refractive_index(wavelength)? * thickness / wavelength)
    }
}

/// Material with one index curve per crystal axis (identical for isotropic media).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub name: String,
    pub ordinary: MaterialDispersion,
    pub extraordinary: MaterialDispersion,
}

impl Material {
    pub fn axis(&self, axis: Axis) -> &MaterialDispersion {
        match axis {
            Axis::Ordinary => &self.ordinary,
            Axis::Extraordinary => &self.extraordinary,
        }
    }

    pub fn with_absorption(mut self, absorption: Absorption) -> Self {
        self.ordinary.absorption = absorption.clone();
        self.extraordinary.absorption = absorption;
        self
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Curve {
            sellmeier_b: Vec<f64>,
            sellmeier_c_um2: Vec<f64>,
            range_nm: [f64; 2],
        }
        #[derive(Deserialize)]
        struct AbsorptionFile {
            per_plate_transmission: Option<f64>,
            transparent_above_nm: Option<f64>,
            /// rows (wavelength_nm, alpha_per_cm)
            table: Option<Vec<[f64; 2]>>,
        }
        #[derive(Deserialize)]
        struct File {
            name: String,
            ordinary: Curve,
            extraordinary: Option<Curve>,
            absorption: Option<AbsorptionFile>,
        }
        let f: File = toml::from_str(s).map_err(|e| RamanError::Config(e.to_string()))?;
        let absorption = match f.absorption {
            None => Absorption::default_per_plate(),
            Some(AbsorptionFile { table: Some(rows), .. }) => Absorption::Table {
                wavelength_nm: rows.iter().map(|r| r[0]).collect(),
                alpha_per_m: rows.iter().map(|r| r[1] * 100.0).collect(),
            },
            Some(AbsorptionFile {
                per_plate_transmission: Some(t),
                transparent_above_nm,
                ..
            }) => Absorption::PerPlate {
                intensity_transmission: t,
                transparent_above_nm,
            },
            Some(_) => Absorption::default_per_plate(),
        };
        let curve = |c: Curve, axis: &str| MaterialDispersion {
            name: format!("{} ({axis})", f.name),
            sellmeier_b: c.sellmeier_b,
            sellmeier_c_um2: c.sellmeier_c_um2,
            range_nm: (c.range_nm[0], c.range_nm[1]),
            absorption: absorption.clone(),
        };
        let ordinary = curve(f.ordinary, "ordinary");
        let extraordinary = match f.extraordinary {
            Some(c) => curve(c, "extraordinary"),
            None => ordinary.clone(),
        };
        ordinary.validate()?;
        extraordinary.validate()?;
        Ok(Material {
            name: f.name,
            ordinary,
            extraordinary,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Magnesium fluoride shipped with the crate (two-axis Sellmeier fit,
    /// default uniform plate absorption).
    pub fn mgf2() -> Self {
        Self::from_toml_str(include_str!("../data/mgf2.toml")).expect("bundled MgF2 data is valid")
    }
}

/// Material name → material.
pub type MaterialCatalog = BTreeMap<String, Material>;

pub fn default_catalog() -> MaterialCatalog {
    let m = Material::mgf2();
    let mut c = MaterialCatalog::new();
    c.insert(m.name.clone(), m);
    c
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plate {
    /// ξ position (m).
    pub position: f64,
    /// Thickness (m).
    pub thickness: f64,
    pub material: String,
    /// Axis seen by the probe series; the driving series sees the orthogonal one.
    pub axis: Axis,
}

impl Plate {
    pub fn axis_for(&self, series: Series) -> Axis {
        match series {
            Series::Probe => self.axis,
            Series::Driving => self.axis.orthogonal(),
        }
    }
}

/// Which field series a plate acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Series {
    Driving,
    Probe,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlateStack {
    plates: Vec<Plate>,
}

impl PlateStack {
    pub fn new(plates: Vec<Plate>) -> Result<Self> {
        for p in &plates {
            if !(p.thickness > 0.0 && p.thickness.is_finite()) {
                return Err(RamanError::Config(format!(
                    "plate at {} m has thickness {}",
                    p.position, p.thickness
                )));
            }
            if !(p.position >= 0.0 && p.position.is_finite()) {
                return Err(RamanError::Config(format!("plate position {} m", p.position)));
            }
        }
        if plates.windows(2).any(|w| w[1].position <= w[0].position) {
            return Err(RamanError::Config(
                "plate positions must increase strictly".into(),
            ));
        }
        Ok(PlateStack { plates })
    }

    pub fn empty() -> Self {
        PlateStack::default()
    }

    pub fn plates(&self) -> &[Plate] {
        &self.plates
    }

    pub fn len(&self) -> usize {
        self.plates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plates.is_empty()
    }

    pub fn validate_within(&self, length: f64) -> Result<()> {
        if let Some(p) = self.plates.iter().find(|p| p.position > length) {
            return Err(RamanError::Config(format!(
                "plate at {} m beyond interaction length {length} m",
                p.position
            )));
        }
        Ok(())
    }

    /// Same plates with new thicknesses (and optionally positions).
    pub fn with_geometry(&self, thickness: &[f64], position: Option<&[f64]>) -> Result<Self> {
        let plates = self
            .plates
            .iter()
            .enumerate()
            .map(|(i, p)| Plate {
                thickness: thickness[i],
                position: position.map_or(p.position, |x| x[i]),
                ..p.clone()
            })
            .collect();
        PlateStack::new(plates)
    }

    /// Plate file rows: position_cm, thickness_um, material, axis.
    /// Reading the file back reproduces the stack exactly.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("position_cm,thickness_um,material,axis\n");
        for p in &self.plates {
            s.push_str(&format!(
                "{},{},{},{}\n",
                scaled(p.position, CM),
                scaled(p.thickness, UM),
                p.material,
                p.axis
            ));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut plates = Vec::new();
        for row in rdr.records() {
            let row = row.map_err(|e| RamanError::Config(e.to_string()))?;
            if row.len() != 4 {
                return Err(RamanError::Config(format!("plate row has {} fields", row.len())));
            }
            let num = |i: usize, shift: i32| -> Result<f64> {
                unscaled(&row[i], shift)
                    .map_err(|e| RamanError::Config(format!("plate field '{}': {e}", &row[i])))
            };
            plates.push(Plate {
                position: num(0, CM)?,
                thickness: num(1, UM)?,
                material: row[2].to_string(),
                axis: row[3].parse()?,
            });
        }
        PlateStack::new(plates)
    }
}

/// Decimal exponent shifts from metres to the file units.
const CM: i32 = 2;
const UM: i32 = 6;

/// `x` times 10^`shift` as a plain decimal, obtained by moving the decimal
/// point of the shortest round-trip form of `x`, so no rounding occurs.
fn scaled(x: f64, shift: i32) -> String {
    let sci = format!("{x:e}");
    let (mant, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let (sign, mant) = mant.strip_prefix('-').map_or(("", mant), |m| ("-", m));
    let digits: String = mant.chars().filter(|c| *c != '.').collect();
    let point = 1 + exp + shift;
    let body = if point <= 0 {
        format!("0.{}{digits}", "0".repeat((-point) as usize))
    } else if point as usize >= digits.len() {
        format!("{digits}{}", "0".repeat(point as usize - digits.len()))
    } else {
        format!("{}.{}", &digits[..point as usize], &digits[point as usize..])
    };
    format!("{sign}{body}")
}

/// Parses a decimal in file units and returns it in metres, shifting the
/// decimal exponent before the single rounding step.
fn unscaled(text: &str, shift: i32) -> std::result::Result<f64, String> {
    let (mant, exp) = match text.find(['e', 'E']) {
        Some(i) => (&text[..i], text[i + 1..].parse::<i32>().map_err(|e| e.to_string())?),
        None => (text, 0),
    };
    format!("{mant}e{}", exp - shift).parse::<f64>().map_err(|e| e.to_string())
}

fn lookup<'a>(catalog: &'a MaterialCatalog, name: &str) -> Result<&'a Material> {
    catalog
        .get(name)
        .ok_or_else(|| RamanError::Config(format!("unknown plate material '{name}'")))
}

/// Per-order phase and amplitude transmission of one plate as a screen.
pub fn plate_screen(
    ladder: &ModeLadder,
    plate: &Plate,
    material: &MaterialDispersion,
    label: String,
) -> Result<Screen> {
    let mut phase = Vec::with_capacity(ladder.len());
    let mut amplitude = Vec::with_capacity(ladder.len());
    for q in ladder.orders() {
        let lam = ladder.wavelength(q);
        phase.push(material.phase(lam, plate.thickness)?);
        amplitude.push(
            material
                .absorption
                .intensity_transmission(lam * 1e9, plate.thickness)
                .sqrt(),
        );
    }
    Ok(Screen {
        position: plate.position,
        label,
        phase,
        amplitude: Some(amplitude),
    })
}

/// Screens for every plate of `stack` as seen by `series`.
pub fn stack_screens(
    stack: &PlateStack,
    ladder: &ModeLadder,
    catalog: &MaterialCatalog,
    series: Series,
) -> Result<Vec<Screen>> {
    stack
        .plates()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let m = lookup(catalog, &p.material)?;
            plate_screen(ladder, p, m.axis(p.axis_for(series)), format!("plate-{}", i + 1))
        })
        .collect()
}

/// Applies one plate to every τ slice of `fs`. Returns the transmitted field
/// and the photons removed per order.
pub fn apply_plate(
    fs: &FieldState,
    plate: &Plate,
    material: &MaterialDispersion,
) -> Result<(FieldState, LossRecord)> {
    let ladder = fs.ladder();
    let screen = plate_screen(ladder, plate, material, "plate".into())?;
    let amp = screen.amplitude.as_ref().expect("plate screens carry amplitudes");
    let omegas = ladder.angular_frequencies();
    let mut out = fs.clone();
    let mut lost = vec![0.0; ladder.len()];
    for j in 0..fs.n_tau() {
        for (i, e) in out.slice_mut(j).iter_mut().enumerate() {
            let before = photon_density(*e, omegas[i]);
            *e *= num_complex::Complex64::from_polar(amp[i], screen.phase[i]);
            lost[i] += before - photon_density(*e, omegas[i]);
        }
    }
    Ok((
        out,
        LossRecord {
            position: plate.position,
            label: screen.label,
            photons_lost: lost,
        },
    ))
}

/// Accumulated plate phase difference φ_q − φ_{q−1} for every adjacent pair,
/// over all plates at or before `up_to` (m), wrapped to (−π, π].
pub fn relative_phase_map(
    stack: &PlateStack,
    up_to: f64,
    ladder: &ModeLadder,
    catalog: &MaterialCatalog,
    series: Series,
) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; ladder.len().saturating_sub(1)];
    for p in stack.plates().iter().filter(|p| p.position <= up_to) {
        let m = lookup(catalog, &p.material)?.axis(p.axis_for(series));
        let ph: Vec<f64> = ladder
            .orders()
            .map(|q| m.phase(ladder.wavelength(q), p.thickness))
            .collect::<Result<_>>()?;
        for (k, w) in ph.windows(2).enumerate() {
            acc[k] += w[1] - w[0];
        }
    }
    Ok(acc.into_iter().map(wrap_phase).collect())
}
