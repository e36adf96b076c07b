//! Vehicle speed traces.

use std::path::Path;

use crate::error::PlantError;

#[derive(Debug, Clone, PartialEq)]
pub struct DriveCycle {
    pub name: String,
    times: Vec<f64>,
    speeds: Vec<f64>,
}

impl DriveCycle {
    pub fn new(name: impl Into<String>, times: Vec<f64>, speeds: Vec<f64>) -> Result<Self, PlantError> {
        if times.len() != speeds.len() || times.len() < 2 {
            return Err(PlantError::InvalidCycle("need at least two (time, speed) samples".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(PlantError::InvalidCycle("sample times must strictly increase".into()));
        }
        if times[0] != 0.0 {
            return Err(PlantError::InvalidCycle("cycle must start at t = 0".into()));
        }
        if speeds.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(PlantError::InvalidCycle("speeds must be finite and >= 0".into()));
        }
        Ok(Self {
            name: name.into(),
            times,
            speeds,
        })
    }

    pub fn duration(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn sample_times(&self) -> &[f64] {
        &self.times
    }

    pub fn target_speeds(&self) -> &[f64] {
        &self.speeds
    }

    /// Linearly interpolated target speed in km/h; held constant past the end.
    pub fn speed_at(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return self.speeds[0];
        }
        if t >= self.duration() {
            return *self.speeds.last().unwrap();
        }
        let i = self.times.partition_point(|&x| x <= t);
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let (v0, v1) = (self.speeds[i - 1], self.speeds[i]);
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    /// Reads a `time_s,speed_kmh` CSV trace.
    pub fn from_csv_reader<R: std::io::Read>(name: &str, reader: R) -> Result<Self, PlantError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| PlantError::InvalidCycle(e.to_string()))?
            .clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| PlantError::InvalidCycle(format!("missing column {name}")))
        };
        let (ti, vi) = (col("time_s")?, col("speed_kmh")?);
        let mut times = Vec::new();
        let mut speeds = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| PlantError::InvalidCycle(e.to_string()))?;
            let parse = |i: usize| {
                rec.get(i)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| PlantError::InvalidCycle(format!("row {}: bad number", line + 2)))
            };
            times.push(parse(ti)?);
            speeds.push(parse(vi)?);
        }
        Self::new(name, times, speeds)
    }

    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self, PlantError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| PlantError::InvalidCycle(format!("{}: {e}", path.display())))?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Self::from_csv_reader(&name, file)
    }

    /// 1800 s synthetic cycle: urban stop-and-go (0-600 s), extra-urban
    /// (600-1055 s), rural/high (1055-1500 s) and motorway (1500-1800 s).
    pub fn synthetic() -> Self {
        const WAYPOINTS: &[(f64, f64)] = &[
            // urban
            (0.0, 0.0), (12.0, 0.0), (22.0, 18.0), (40.0, 32.0), (55.0, 32.0), (68.0, 0.0),
            (85.0, 0.0), (100.0, 25.0), (115.0, 45.0), (150.0, 45.0), (170.0, 20.0), (185.0, 0.0),
            (205.0, 0.0), (220.0, 22.0), (238.0, 40.0), (270.0, 38.0), (290.0, 50.0), (310.0, 50.0),
            (330.0, 25.0), (345.0, 0.0), (365.0, 0.0), (378.0, 15.0), (395.0, 30.0), (420.0, 30.0),
            (440.0, 45.0), (470.0, 45.0), (490.0, 20.0), (505.0, 0.0), (525.0, 0.0), (540.0, 25.0),
            (560.0, 35.0), (585.0, 12.0), (600.0, 0.0),
            // extra-urban
            (615.0, 0.0), (635.0, 30.0), (655.0, 55.0), (700.0, 60.0), (730.0, 70.0), (780.0, 70.0),
            (800.0, 50.0), (830.0, 50.0), (850.0, 65.0), (900.0, 68.0), (930.0, 40.0), (950.0, 0.0),
            (970.0, 0.0), (990.0, 35.0), (1010.0, 60.0), (1040.0, 25.0), (1055.0, 0.0),
            // rural / high
            (1070.0, 0.0), (1090.0, 40.0), (1110.0, 70.0), (1140.0, 90.0), (1200.0, 95.0),
            (1230.0, 80.0), (1260.0, 100.0), (1320.0, 100.0), (1350.0, 75.0), (1380.0, 85.0),
            (1420.0, 60.0), (1445.0, 25.0), (1460.0, 0.0), (1480.0, 0.0), (1500.0, 20.0),
            // motorway
            (1520.0, 55.0), (1545.0, 90.0), (1580.0, 115.0), (1640.0, 130.0), (1680.0, 125.0),
            (1720.0, 105.0), (1750.0, 80.0), (1775.0, 40.0), (1790.0, 0.0), (1800.0, 0.0),
        ];
        let (times, speeds) = WAYPOINTS.iter().copied().unzip();
        Self::new("synthetic", times, speeds).expect("built-in cycle is valid")
    }
}
