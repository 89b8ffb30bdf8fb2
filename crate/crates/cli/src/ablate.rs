use std::fmt::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tskip::graph::ArchSpec;
use tskip::metrics::{energy_total, profile_network, EnergyModel};

use crate::commands::{load_data, pool, train_model, Hyper};
use crate::config::record;
use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    DeltaT,
    Position,
    Depth,
}

impl Axis {
    fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "delta_t" | "delta-t" => Ok(Axis::DeltaT),
            "position" => Ok(Axis::Position),
            "depth" => Ok(Axis::Depth),
            _ => Err(CliError::Usage(format!("unknown axis '{s}' (delta_t, position, depth)"))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Axis::DeltaT => "delta_t",
            Axis::Position => "position",
            Axis::Depth => "depth",
        }
    }
}

/// The base architecture moved to one grid point. `delta_t` sets every
/// skip's delay; `position` moves the first skip's destination; `depth`
/// sets the number of hidden layers, repeating the last hidden layer or
/// dropping trailing ones, with skips into the readout following it.
pub fn variant(base: &ArchSpec, axis: Axis, value: usize) -> Result<ArchSpec, String> {
    let mut spec = base.clone();
    match axis {
        Axis::DeltaT => spec.tskips.iter_mut().for_each(|e| e.delta_t = value),
        Axis::Position => spec.tskips[0].destination = value,
        Axis::Depth => {
            if value == 0 {
                return Err("depth must be at least 1".into());
            }
            let old = base.depth();
            let readout = *base.layers.last().expect("layers");
            let hidden = &base.layers[..old - 1];
            let mut layers: Vec<_> = hidden.iter().copied().take(value).collect();
            while layers.len() < value {
                layers.push(*hidden.last().ok_or("base has no hidden layer to repeat")?);
            }
            layers.push(readout);
            spec.layers = layers;
            for e in &mut spec.tskips {
                for n in [&mut e.origin, &mut e.destination] {
                    if *n == old {
                        *n = value + 1;
                    }
                }
            }
        }
    }
    spec.check().map_err(|e| e.to_string())?;
    Ok(spec)
}

#[derive(Serialize, Deserialize)]
pub struct AblateRun {
    pub axis: Option<String>,
    pub grid: Option<Vec<usize>>,
    pub spec: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    #[serde(default = "one")]
    pub parallel: usize,
    #[serde(flatten)]
    pub hyper: Hyper,
}

fn one() -> usize {
    1
}

pub const HEADER: &str = "axis,value,status,test_accuracy,test_loss,spike_rate,energy_j,params";

pub fn ablate(run: AblateRun) -> Result<(), CliError> {
    let axis = Axis::parse(run.axis.as_deref().ok_or(CliError::Usage("--axis is required".into()))?)?;
    let grid = run.grid.clone().unwrap_or_default();
    if grid.is_empty() {
        return Err(CliError::Usage("--grid needs at least one value".into()));
    }
    let base = ArchSpec::read(run.spec.as_ref().ok_or(CliError::Usage("--spec is required".into()))?)?;
    if axis != Axis::Depth && base.tskips.is_empty() {
        return Err(CliError::Usage(format!("axis {} needs a base spec with a skip", axis.name())));
    }
    let (train_set, test_set) = load_data(run.data.as_ref().ok_or(CliError::Usage("--data is required".into()))?)?;
    let out = run.out.clone().ok_or(CliError::Usage("--out is required".into()))?;
    run.hyper.train_config()?;
    record(&out, "ablate", &run)?;
    let eval_set = test_set.as_ref().unwrap_or(&train_set);

    let point = |&value: &usize| -> Result<String, CliError> {
        let name = axis.name();
        let spec = match variant(&base, axis, value) {
            Ok(s) => s,
            Err(why) => {
                eprintln!("warning: skipping {name}={value}: {why}");
                return Ok(format!("{name},{value},skipped: {},,,,,", why.replace(',', ";")));
            }
        };
        let label = format!("[{name}={value}] ");
        let (mut net, report) = train_model(spec, &train_set, test_set.as_ref(), &run.hyper, None, &label)?;
        let profile = profile_network(&mut net, eval_set, run.hyper.batch_size)?;
        let energy = energy_total(&profile, &EnergyModel::default());
        let (acc, loss, rate) = report
            .final_test
            .map_or((f64::NAN, f64::NAN, f64::NAN), |r| (r.accuracy, r.loss, r.spike_rate));
        Ok(format!(
            "{name},{value},ok,{acc},{loss},{rate},{},{}",
            energy.total_energy_j,
            net.param_count()
        ))
    };
    let rows: Vec<String> = pool(run.parallel)?.install(|| grid.par_iter().map(point).collect::<Result<_, _>>())?;
    let mut csv = String::from(HEADER);
    csv.push('\n');
    for r in &rows {
        writeln!(csv, "{r}").unwrap();
        println!("{r}");
    }
    let path = out.join("ablation.csv");
    std::fs::write(&path, csv).map_err(|e| CliError::io(&path, e))
}
