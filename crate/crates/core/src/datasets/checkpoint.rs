//! Flow checkpoints and ensemble manifests.
//!
//! Both are line-oriented `key=value` text behind a `# format=1` line.
//! Weights are written row-major with 17 significant digits, so a reloaded
//! model reproduces log-likelihoods exactly. A manifest names its member
//! checkpoints by paths relative to the manifest's directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use sha2::{Digest, Sha256};

use super::io::{check_format_line, fmt_f64, parse_f64};
use super::{Whitening, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::flow::{CouplingBlock, FlowConfig, FlowModel, Permutation};
use crate::numcore::{AdamConfig, Dense, Mlp, MLP_DEPTH};
use crate::waic::{Ensemble, TrainConfig};

pub const MANIFEST_FILE: &str = "manifest.txt";

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(fmt_f64).collect::<Vec<_>>().join(" ")
}

pub(crate) fn flow_to_string(model: &FlowModel) -> String {
    let c = model.config();
    let mut out = String::new();
    let _ = writeln!(out, "# format={FORMAT_VERSION}");
    let _ = writeln!(out, "kind=flow");
    let _ = writeln!(out, "format_version={FORMAT_VERSION}");
    let _ = writeln!(out, "input_dim={}", model.input_dim());
    let _ = writeln!(out, "n_blocks={}", c.n_blocks);
    let _ = writeln!(out, "hidden_width={}", c.hidden_width);
    let _ = writeln!(out, "clamp_alpha={}", fmt_f64(c.clamp_alpha));
    let _ = writeln!(out, "seed={}", model.seed());
    let _ = writeln!(out, "loss_curve={}", join(model.loss_curve().iter().copied()));
    for (k, (block, perm)) in model.blocks().iter().zip(model.permutations()).enumerate() {
        let _ = writeln!(out, "block={k}");
        let idx: Vec<String> = perm.indices().iter().map(|i| i.to_string()).collect();
        let _ = writeln!(out, "permutation={}", idx.join(" "));
        for (l, layer) in block.subnet().layers().iter().enumerate() {
            let _ = writeln!(out, "layer={l} rows={} cols={}", layer.out_dim(), layer.in_dim());
            for row in layer.weight.rows() {
                let _ = writeln!(out, "{}", join(row.iter().copied()));
            }
            let _ = writeln!(out, "bias={}", join(layer.bias.iter().copied()));
        }
    }
    let _ = writeln!(out, "end");
    out
}

struct Cursor<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Result<Self> {
        let mut it = text.lines();
        check_format_line(it.next())?;
        let lines = text
            .lines()
            .enumerate()
            .skip(1)
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
            .collect();
        Ok(Self { lines, pos: 0 })
    }

    fn line_no(&self) -> usize {
        self.lines
            .get(self.pos)
            .map(|(n, _)| *n)
            .unwrap_or_else(|| self.lines.last().map(|(n, _)| n + 1).unwrap_or(2))
    }

    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        let line = self
            .lines
            .get(self.pos)
            .copied()
            .ok_or_else(|| Error::parse(self.line_no(), "unexpected end of file"))?;
        self.pos += 1;
        Ok(line)
    }

    fn value(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (n, line) = self.next_line()?;
        let rest = line
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix('='))
            .ok_or_else(|| Error::parse(n, format!("expected '{key}=...'")))?;
        Ok((n, rest.trim()))
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let (n, v) = self.value(key)?;
        v.parse().map_err(|_| Error::parse(n, format!("invalid value for {key}: '{v}'")))
    }

    fn float(&mut self, key: &str) -> Result<f64> {
        let (n, v) = self.value(key)?;
        parse_f64(v, n)
    }

    fn floats(&mut self, key: &str, expected: Option<usize>) -> Result<Vec<f64>> {
        let (n, v) = self.value(key)?;
        let vals = parse_floats(v, n)?;
        check_count(&vals, expected, n)?;
        Ok(vals)
    }

    fn float_row(&mut self, expected: usize) -> Result<Vec<f64>> {
        let (n, line) = self.next_line()?;
        let vals = parse_floats(line, n)?;
        check_count(&vals, Some(expected), n)?;
        Ok(vals)
    }

    fn expect(&mut self, exact: &str) -> Result<()> {
        let (n, line) = self.next_line()?;
        if line.trim() != exact {
            return Err(Error::parse(n, format!("expected '{exact}', found '{line}'")));
        }
        Ok(())
    }
}

fn parse_floats(s: &str, line: usize) -> Result<Vec<f64>> {
    s.split_whitespace().map(|t| parse_f64(t, line)).collect()
}

fn check_count(vals: &[f64], expected: Option<usize>, line: usize) -> Result<()> {
    match expected {
        Some(e) if vals.len() != e => Err(Error::parse(line, format!("expected {e} values, found {}", vals.len()))),
        _ => Ok(()),
    }
}

fn check_version(cur: &mut Cursor, kind: &str) -> Result<()> {
    let (n, found) = cur.value("kind")?;
    if found != kind {
        return Err(Error::parse(n, format!("expected a {kind} file, found kind={found}")));
    }
    let (_, version) = cur.value("format_version")?;
    if version != FORMAT_VERSION.to_string() {
        return Err(Error::UnsupportedVersion {
            found: version.to_string(),
            supported: FORMAT_VERSION,
        });
    }
    Ok(())
}

pub(crate) fn flow_from_str(text: &str) -> Result<FlowModel> {
    let mut cur = Cursor::new(text)?;
    check_version(&mut cur, "flow")?;
    let input_dim: usize = cur.parsed("input_dim")?;
    let n_blocks: usize = cur.parsed("n_blocks")?;
    let hidden_width: usize = cur.parsed("hidden_width")?;
    let clamp_alpha = cur.float("clamp_alpha")?;
    let seed: u64 = cur.parsed("seed")?;
    let loss_curve = cur.floats("loss_curve", None)?;
    if input_dim < 2 {
        return Err(Error::InvalidDimension(input_dim));
    }
    let dims = [input_dim.div_ceil(2), hidden_width, hidden_width, 2 * (input_dim / 2)];

    let mut blocks = Vec::with_capacity(n_blocks);
    let mut perms = Vec::with_capacity(n_blocks);
    for k in 0..n_blocks {
        cur.expect(&format!("block={k}"))?;
        let (n, p) = cur.value("permutation")?;
        let idx = p
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| Error::parse(n, format!("bad permutation index '{t}'"))))
            .collect::<Result<Vec<_>>>()?;
        if idx.len() != input_dim {
            return Err(Error::parse(n, format!("permutation has {} entries, expected {input_dim}", idx.len())));
        }
        perms.push(Permutation::new(idx).map_err(|e| Error::parse(n, e.to_string()))?);

        let mut layers = Vec::with_capacity(MLP_DEPTH);
        for l in 0..MLP_DEPTH {
            let (rows, cols) = (dims[l + 1], dims[l]);
            cur.expect(&format!("layer={l} rows={rows} cols={cols}"))?;
            let mut weight = Array2::zeros((rows, cols));
            for r in 0..rows {
                let vals = cur.float_row(cols)?;
                weight.row_mut(r).assign(&Array1::from(vals));
            }
            let bias = Array1::from(cur.floats("bias", Some(rows))?);
            layers.push(Dense { weight, bias });
        }
        let line = cur.line_no();
        let subnet = Mlp::new(layers).map_err(|e| Error::parse(line, e.to_string()))?;
        blocks.push(CouplingBlock::new(input_dim, subnet, clamp_alpha)?);
    }
    cur.expect("end")?;
    let mut model = FlowModel::from_parts(blocks, perms)?;
    model.set_seed(seed);
    model.set_loss_curve(loss_curve);
    Ok(model)
}

/// Writes one flow checkpoint.
pub fn save_checkpoint(model: &FlowModel, path: &Path) -> Result<()> {
    fs::write(path, flow_to_string(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<FlowModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    flow_from_str(&text)
}

fn config_lines(config: &TrainConfig, whitening: &Whitening) -> String {
    let mut out = String::new();
    let f = config.flow;
    let a = config.adam;
    let _ = writeln!(out, "n_blocks={}", f.n_blocks);
    let _ = writeln!(out, "hidden_width={}", f.hidden_width);
    let _ = writeln!(out, "clamp_alpha={}", fmt_f64(f.clamp_alpha));
    let _ = writeln!(out, "batch_size={}", config.batch_size);
    let _ = writeln!(out, "epochs={}", config.epochs);
    let _ = writeln!(out, "learning_rate={}", fmt_f64(a.learning_rate));
    let _ = writeln!(out, "beta1={}", fmt_f64(a.beta1));
    let _ = writeln!(out, "beta2={}", fmt_f64(a.beta2));
    let _ = writeln!(out, "epsilon={}", fmt_f64(a.epsilon));
    let _ = writeln!(out, "lr_decay={}", fmt_f64(config.lr_decay));
    let _ = writeln!(out, "whitening_dim={}", whitening.dim());
    let _ = writeln!(out, "whitening_rank={}", whitening.rank());
    let _ = writeln!(out, "whitening_mean={}", join(whitening.mean().iter().copied()));
    let _ = writeln!(out, "whitening_variance={}", join(whitening.variances().iter().copied()));
    for row in whitening.directions().rows() {
        let _ = writeln!(out, "{}", join(row.iter().copied()));
    }
    out
}

/// Hex SHA-256 prefix of the training configuration and whitening map.
pub fn config_hash(config: &TrainConfig, whitening: &Whitening) -> String {
    hex_digest(config_lines(config, whitening).as_bytes())
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn member_file(i: usize) -> String {
    format!("member_{i:03}.ckpt")
}

/// Writes `manifest.txt` and one checkpoint per member into `dir`; returns
/// the manifest path.
pub fn save_ensemble(ensemble: &Ensemble, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = String::new();
    let _ = writeln!(out, "# format={FORMAT_VERSION}");
    let _ = writeln!(out, "kind=ensemble");
    let _ = writeln!(out, "format_version={FORMAT_VERSION}");
    let _ = writeln!(out, "members={}", ensemble.len());
    let _ = writeln!(out, "config_hash={}", config_hash(ensemble.train_config(), ensemble.whitening()));
    out.push_str(&config_lines(ensemble.train_config(), ensemble.whitening()));
    for (i, member) in ensemble.members().iter().enumerate() {
        let file = member_file(i);
        save_checkpoint(member, &dir.join(&file))?;
        let _ = writeln!(out, "member={i} seed={} file={file}", member.seed());
    }
    let _ = writeln!(out, "end");
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn load_ensemble(manifest: &Path) -> Result<Ensemble> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut cur = Cursor::new(&text)?;
    check_version(&mut cur, "ensemble")?;
    let n_members: usize = cur.parsed("members")?;
    let (_, stored_hash) = cur.value("config_hash")?;
    let stored_hash = stored_hash.to_string();
    let flow = FlowConfig {
        n_blocks: cur.parsed("n_blocks")?,
        hidden_width: cur.parsed("hidden_width")?,
        clamp_alpha: cur.float("clamp_alpha")?,
    };
    let batch_size = cur.parsed("batch_size")?;
    let epochs = cur.parsed("epochs")?;
    let adam = AdamConfig {
        learning_rate: cur.float("learning_rate")?,
        beta1: cur.float("beta1")?,
        beta2: cur.float("beta2")?,
        epsilon: cur.float("epsilon")?,
    };
    let lr_decay = cur.float("lr_decay")?;
    let config = TrainConfig {
        flow,
        batch_size,
        epochs,
        adam,
        lr_decay,
    };
    let dim: usize = cur.parsed("whitening_dim")?;
    let rank: usize = cur.parsed("whitening_rank")?;
    let mean = cur.floats("whitening_mean", Some(dim))?;
    let variances = cur.floats("whitening_variance", Some(rank))?;
    let mut directions = Array2::zeros((rank, dim));
    for r in 0..rank {
        directions.row_mut(r).assign(&Array1::from(cur.float_row(dim)?));
    }
    let whitening = Whitening::from_parts(mean, directions, variances)?;
    if config_hash(&config, &whitening) != stored_hash {
        return Err(Error::Manifest("config_hash does not match the manifest contents".into()));
    }

    let mut members = Vec::with_capacity(n_members);
    for i in 0..n_members {
        let (n, line) = cur.next_line()?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let get = |key: &str| {
            fields
                .iter()
                .find_map(|f| f.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| Error::parse(n, format!("member line lacks '{key}='")))
        };
        if get("member")? != i.to_string() {
            return Err(Error::parse(n, format!("expected member={i}")));
        }
        let seed: u64 = get("seed")?
            .parse()
            .map_err(|_| Error::parse(n, "bad member seed"))?;
        let path = base.join(get("file")?);
        if !path.exists() {
            return Err(Error::Manifest(format!("member {i} file {} is missing", path.display())));
        }
        let model = load_checkpoint(&path).map_err(|e| Error::member(i, e))?;
        if model.seed() != seed {
            return Err(Error::Manifest(format!("member {i} seed differs from its checkpoint")));
        }
        members.push(model);
    }
    cur.expect("end")?;
    Ensemble::new(members, whitening, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;

    fn small_model(seed: u64) -> FlowModel {
        let mut m = FlowModel::new(5, FlowConfig { n_blocks: 3, hidden_width: 6, clamp_alpha: 2.0 }, seed).unwrap();
        m.set_loss_curve(vec![3.5, 2.25, 1.0 / 3.0]);
        m
    }

    #[test]
    fn flow_roundtrip_is_exact() {
        let model = small_model(4);
        let back = flow_from_str(&flow_to_string(&model)).unwrap();
        assert_eq!(back, model);
        let mut rng = Rng::new(1);
        for _ in 0..100 {
            let x: Vec<f64> = (0..5).map(|_| 2.0 * rng.normal()).collect();
            assert_eq!(
                model.log_likelihood(&x).unwrap().to_bits(),
                back.log_likelihood(&x).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn corrupted_weight_line_is_parse_error() {
        let text = flow_to_string(&small_model(2));
        let lines: Vec<&str> = text.lines().collect();
        let target = lines.iter().position(|l| l.starts_with("layer=1")).unwrap() + 1;
        let mut broken: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
        broken[target] = broken[target].replacen('e', "q", 1);
        match flow_from_str(&broken.join("\n")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, target + 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_rejected() {
        let text = flow_to_string(&small_model(2)).replace("format_version=1", "format_version=7");
        assert!(matches!(flow_from_str(&text), Err(Error::UnsupportedVersion { .. })));
    }
}
