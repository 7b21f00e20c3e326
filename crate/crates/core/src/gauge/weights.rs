//! Weight files: a text header of `key value` lines closed by `end`, then
//! the parameters as little-endian `f64` in the order
//! `mean, std, W1, b1, W2, b2` (matrices column-major).

use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use super::{GaugeError, GaugeNet};
use crate::model::{ScenarioInput, Vpp};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "# loopmac gauge network";
const INTERIOR_POLICY: &str = "chebyshev-per-scenario";

fn err(msg: impl Into<String>) -> GaugeError {
    GaugeError::Weights(msg.into())
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// File name of agent `i`'s weights inside a weights directory.
pub fn weights_path(dir: &Path, agent: usize) -> PathBuf {
    dir.join(format!("agent{agent}.gnet"))
}

impl GaugeNet {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), GaugeError> {
        let e = |x: std::io::Error| err(x.to_string());
        let header = format!(
            "{MAGIC}\nformat {FORMAT_VERSION}\nagent {}\nsteps {}\ninputs {}\nfeatures {}\nhidden {}\noutputs {}\n\
             independent {}\ndependent {}\ninterior {INTERIOR_POLICY}\nbyte_order little-endian\n\
             payload mean,std,w1,b1,w2,b2 f64 column-major\nend\n",
            self.agent,
            self.steps,
            self.n_inputs(),
            self.n_features,
            self.mlp.hidden(),
            self.mlp.n_out(),
            join(&self.elimination().independent),
            join(&self.elimination().dependent),
        );
        w.write_all(header.as_bytes()).map_err(e)?;
        let blocks = self.mlp.params();
        for block in [&self.mean[..], &self.std[..], blocks[0], blocks[1], blocks[2], blocks[3]] {
            for x in block {
                w.write_all(&x.to_le_bytes()).map_err(e)?;
            }
        }
        w.flush().map_err(e)
    }

    pub fn save(&self, path: &Path) -> Result<(), GaugeError> {
        let f = std::fs::File::create(path).map_err(|e| err(format!("{}: {e}", path.display())))?;
        self.write_to(std::io::BufWriter::new(f))
    }

    /// Reads weights into a net freshly laid out for `agent` on `template`,
    /// checking that dimensions and the variable partition agree.
    pub fn read_from<R: Read>(r: R, vpp: &Vpp, template: &ScenarioInput, agent: usize) -> Result<Self, GaugeError> {
        let mut rd = BufReader::new(r);
        let mut fields = std::collections::HashMap::new();
        let mut first = true;
        loop {
            let mut line = String::new();
            if rd.read_line(&mut line).map_err(|e| err(e.to_string()))? == 0 {
                return Err(err("header not terminated by `end`"));
            }
            let line = line.trim_end();
            if first {
                if line != MAGIC {
                    return Err(err("not a gauge network file"));
                }
                first = false;
                continue;
            }
            if line == "end" {
                break;
            }
            let (k, v) = line.split_once(' ').ok_or_else(|| err(format!("malformed header line {line:?}")))?;
            fields.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| fields.get(k).map(String::as_str).ok_or_else(|| err(format!("header lacks `{k}`")));
        let num = |k: &str| -> Result<usize, GaugeError> { get(k)?.parse().map_err(|_| err(format!("bad `{k}`"))) };
        if num("format")? != FORMAT_VERSION as usize {
            return Err(err(format!("unsupported format {}", get("format")?)));
        }
        if get("byte_order")? != "little-endian" || get("interior")? != INTERIOR_POLICY {
            return Err(err("unsupported byte order or interior policy"));
        }
        let mut net = GaugeNet::new(vpp, template, agent, 0)?;
        let expect = [
            ("agent", agent),
            ("steps", net.steps),
            ("inputs", net.n_inputs()),
            ("features", net.n_features),
            ("hidden", net.mlp.hidden()),
            ("outputs", net.mlp.n_out()),
        ];
        for (k, v) in expect {
            if num(k)? != v {
                return Err(GaugeError::ShapeMismatch(format!("weights have {k} {}, model needs {v}", num(k)?)));
            }
        }
        if get("independent")? != join(&net.elimination().independent)
            || get("dependent")? != join(&net.elimination().dependent)
        {
            return Err(GaugeError::ShapeMismatch("variable partition differs from the model".into()));
        }
        let mut read_block = |dst: &mut [f64]| -> Result<(), GaugeError> {
            let mut buf = [0u8; 8];
            for x in dst.iter_mut() {
                rd.read_exact(&mut buf).map_err(|_| err("payload truncated"))?;
                *x = f64::from_le_bytes(buf);
            }
            Ok(())
        };
        read_block(&mut net.mean)?;
        read_block(&mut net.std)?;
        for block in net.mlp.params_mut() {
            read_block(block)?;
        }
        let mut rest = Vec::new();
        rd.read_to_end(&mut rest).map_err(|e| err(e.to_string()))?;
        if !rest.is_empty() {
            return Err(err(format!("{} trailing bytes", rest.len())));
        }
        if !net.mlp.is_finite() || net.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(err("non-finite parameters"));
        }
        Ok(net)
    }

    pub fn load(path: &Path, vpp: &Vpp, template: &ScenarioInput, agent: usize) -> Result<Self, GaugeError> {
        let f = std::fs::File::open(path).map_err(|e| GaugeError::WeightsMissing(format!("{}: {e}", path.display())))?;
        Self::read_from(f, vpp, template, agent)
    }
}

pub fn save_nets(dir: &Path, nets: &[GaugeNet]) -> Result<(), GaugeError> {
    std::fs::create_dir_all(dir).map_err(|e| err(format!("{}: {e}", dir.display())))?;
    for n in nets {
        n.save(&weights_path(dir, n.agent))?;
    }
    Ok(())
}

pub fn load_nets(dir: &Path, vpp: &Vpp, template: &ScenarioInput) -> Result<Vec<GaugeNet>, GaugeError> {
    (0..vpp.n_agents())
        .map(|i| GaugeNet::load(&weights_path(dir, i), vpp, template, i))
        .collect()
}
