use std::io::Read;

use crate::error::{Error, Result};

/// One AER event from an event camera.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Event {
    pub x: usize,
    pub y: usize,
    pub t_us: u64,
    /// ON (`true`) or OFF polarity.
    pub p: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EventStream {
    pub events: Vec<Event>,
    /// `(width, height)`
    pub sensor_size: (usize, usize),
}

/// One spike of an audio front end: channel `unit` fired at `t_us`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AudioSpike {
    pub unit: usize,
    pub t_us: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AudioSpikeStream {
    pub spikes: Vec<AudioSpike>,
    pub num_units: usize,
}

/// Reads numeric CSV rows of exactly `width` columns, skipping a leading
/// header and blank lines. Yields `(line, fields)`.
fn rows<R: Read>(reader: R, width: usize) -> Result<Vec<(usize, Vec<u64>)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let first_numeric = rec.get(0).is_some_and(|f| f.parse::<u64>().is_ok());
        if out.is_empty() && i == 0 && !first_numeric {
            continue;
        }
        if rec.len() != width {
            return Err(Error::Parse {
                line,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        let fields = rec
            .iter()
            .map(|f| {
                f.parse::<u64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("'{f}' is not a non-negative integer"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push((line, fields));
    }
    Ok(out)
}

fn check_order(prev: &mut u64, t: u64, line: usize) -> Result<()> {
    if t < *prev {
        return Err(Error::Parse {
            line,
            message: format!("timestamp {t} is earlier than the previous {prev}"),
        });
    }
    *prev = t;
    Ok(())
}

impl EventStream {
    /// Parses `x,y,t_us,p` rows. The sensor size is taken from `sensor` or
    /// else from the largest coordinates seen.
    pub fn parse<R: Read>(reader: R, sensor: Option<(usize, usize)>) -> Result<Self> {
        let mut events = Vec::new();
        let mut last = 0;
        let (mut w, mut h) = (0, 0);
        for (line, f) in rows(reader, 4)? {
            let p = match f[3] {
                0 => false,
                1 => true,
                other => {
                    return Err(Error::Parse {
                        line,
                        message: format!("polarity must be 0 or 1, got {other}"),
                    })
                }
            };
            let (x, y) = (f[0] as usize, f[1] as usize);
            if let Some((sw, sh)) = sensor {
                if x >= sw || y >= sh {
                    return Err(Error::Parse {
                        line,
                        message: format!("pixel ({x}, {y}) outside a {sw}×{sh} sensor"),
                    });
                }
            }
            check_order(&mut last, f[2], line)?;
            w = w.max(x + 1);
            h = h.max(y + 1);
            events.push(Event { x, y, t_us: f[2], p });
        }
        Ok(Self {
            events,
            sensor_size: sensor.unwrap_or((w, h)),
        })
    }

    pub fn parse_str(text: &str, sensor: Option<(usize, usize)>) -> Result<Self> {
        Self::parse(text.as_bytes(), sensor)
    }

    pub fn duration_us(&self) -> u64 {
        self.events.last().map_or(0, |e| e.t_us + 1)
    }
}

impl AudioSpikeStream {
    /// Parses `unit,t_us` rows.
    pub fn parse<R: Read>(reader: R, num_units: Option<usize>) -> Result<Self> {
        let mut spikes = Vec::new();
        let mut last = 0;
        let mut n = 0;
        for (line, f) in rows(reader, 2)? {
            let unit = f[0] as usize;
            if let Some(limit) = num_units {
                if unit >= limit {
                    return Err(Error::Parse {
                        line,
                        message: format!("unit {unit} outside {limit} units"),
                    });
                }
            }
            check_order(&mut last, f[1], line)?;
            n = n.max(unit + 1);
            spikes.push(AudioSpike { unit, t_us: f[1] });
        }
        Ok(Self {
            spikes,
            num_units: num_units.unwrap_or(n),
        })
    }

    pub fn parse_str(text: &str, num_units: Option<usize>) -> Result<Self> {
        Self::parse(text.as_bytes(), num_units)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,t_us\n");
        for sp in &self.spikes {
            s.push_str(&format!("{},{}\n", sp.unit, sp.t_us));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_event() {
        let s = EventStream::parse_str("3,4,1000,1", None).unwrap();
        assert_eq!(
            s.events,
            vec![Event {
                x: 3,
                y: 4,
                t_us: 1000,
                p: true
            }]
        );
        assert_eq!(s.sensor_size, (4, 5));
    }

    #[test]
    fn empty_and_header_only() {
        assert!(EventStream::parse_str("", None).unwrap().events.is_empty());
        assert!(EventStream::parse_str("x,y,t_us,p\n", None).unwrap().events.is_empty());
        assert!(AudioSpikeStream::parse_str("", Some(700)).unwrap().spikes.is_empty());
    }

    #[test]
    fn bad_polarity_reports_line() {
        let err = EventStream::parse_str("x,y,t_us,p\n1,1,5,0\n2,2,6,2\n", None).unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("polarity"));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn malformed_rows() {
        assert!(matches!(
            EventStream::parse_str("1,2,3\n", None),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            AudioSpikeStream::parse_str("1,5\n2,x\n", None),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            AudioSpikeStream::parse_str("1,5\n2,4\n", None),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(EventStream::parse_str("9,0,1,1\n", Some((4, 4))).is_err());
        assert!(AudioSpikeStream::parse_str("700,1\n", Some(700)).is_err());
    }

    #[test]
    fn audio_round_trip() {
        let s = AudioSpikeStream::parse_str("x,t_us\n0,10\n5,10\n2,30\n", Some(8)).unwrap();
        assert_eq!(s.spikes.len(), 3);
        assert_eq!(AudioSpikeStream::parse_str(&s.to_csv(), Some(8)).unwrap(), s);
    }
}
