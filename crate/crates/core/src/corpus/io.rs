//! On-disk layout of a generated corpus:
//!
//! ```text
//! manifest.json        vocabularies, OOV set, seeds, counts, generation config
//! lexicon.ckpt         prototypes and both grammars
//! <split>.tsv          id \t domain \t space-separated token ids \t feature ref
//! <split>.feats        feature blobs, one tensor per utterance id
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{Corpus, Domain, DomainSpec, Manifest, PrototypeTable, Split, Utterance};
use crate::error::{Error, Result};
use crate::model::checkpoint;
use crate::numerics::Tensor;

pub const MANIFEST: &str = "manifest.json";
pub const LEXICON: &str = "lexicon.ckpt";

fn domain_tensors(prefix: &str, d: &DomainSpec) -> Result<Vec<(String, Tensor)>> {
    let n = d.vocab.len();
    Ok(vec![
        (
            format!("{prefix}.vocab"),
            Tensor::new(vec![n], d.vocab.iter().map(|&v| v as f64).collect())?,
        ),
        (
            format!("{prefix}.transitions"),
            Tensor::new(vec![n, n], d.transitions.concat())?,
        ),
        (
            format!("{prefix}.len_range"),
            Tensor::new(vec![2], vec![d.len_range.0 as f64, d.len_range.1 as f64])?,
        ),
    ])
}

fn take<'a>(map: &'a HashMap<String, Tensor>, name: &str, path: &Path) -> Result<&'a Tensor> {
    map.get(name).ok_or_else(|| Error::MissingArtifact {
        what: name.to_string(),
        path: path.to_path_buf(),
    })
}

fn as_count(x: f64) -> Result<usize> {
    if x < 0.0 || x.fract() != 0.0 {
        return Err(Error::format(format!("expected a count, found {x}")));
    }
    Ok(x as usize)
}

fn domain_from(map: &HashMap<String, Tensor>, prefix: &str, path: &Path) -> Result<DomainSpec> {
    let vocab = take(map, &format!("{prefix}.vocab"), path)?
        .data()
        .iter()
        .map(|&v| as_count(v))
        .collect::<Result<Vec<_>>>()?;
    let t = take(map, &format!("{prefix}.transitions"), path)?;
    let n = vocab.len();
    if t.shape() != [n, n] {
        return Err(Error::format(format!("{prefix}.transitions has shape {:?}", t.shape())));
    }
    let rows = (0..n).map(|i| t.row(i).to_vec()).collect();
    let lr = take(map, &format!("{prefix}.len_range"), path)?.data();
    if lr.len() != 2 {
        return Err(Error::format(format!("{prefix}.len_range must hold two values")));
    }
    DomainSpec::new(vocab, rows, (as_count(lr[0])?, as_count(lr[1])?))
}

fn split_lines(split: Split, utts: &[Utterance]) -> String {
    let mut out = String::new();
    for u in utts {
        let tokens: Vec<String> = u.tokens.iter().map(|t| t.to_string()).collect();
        let feats = if u.features.is_some() {
            format!("{}.feats:{}", split.name(), u.id)
        } else {
            "-".to_string()
        };
        let _ = writeln!(out, "{}\t{}\t{}\t{}", u.id, u.domain.as_str(), tokens.join(" "), feats);
    }
    out
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = serde_json::to_string_pretty(&corpus.manifest)
        .map_err(|e| Error::format(format!("manifest serialization: {e}")))?;
    write_file(&dir.join(MANIFEST), manifest.as_bytes())?;

    let t = &corpus.prototypes;
    let mut lexicon = vec![
        ("prototypes".to_string(), t.prototypes.clone()),
        (
            "noise".to_string(),
            Tensor::new(vec![3], vec![t.sigma, t.dur_range.0 as f64, t.dur_range.1 as f64])?,
        ),
    ];
    lexicon.extend(domain_tensors("source", &corpus.source)?);
    lexicon.extend(domain_tensors("target", &corpus.target)?);
    checkpoint::save(&dir.join(LEXICON), &lexicon)?;

    for (split, utts) in &corpus.splits {
        write_file(
            &dir.join(format!("{}.tsv", split.name())),
            split_lines(*split, utts).as_bytes(),
        )?;
        if split.is_paired() {
            let blobs: Vec<(String, Tensor)> = utts
                .iter()
                .filter_map(|u| u.features.clone().map(|f| (u.id.clone(), f)))
                .collect();
            checkpoint::save(&dir.join(format!("{}.feats", split.name())), &blobs)?;
        }
    }
    Ok(())
}

fn read_split(dir: &Path, split: Split) -> Result<Vec<Utterance>> {
    let path = dir.join(format!("{}.tsv", split.name()));
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut blobs: Option<HashMap<String, Tensor>> = None;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let bad = |what: &str| Error::format(format!("{}:{}: {what}", path.display(), n + 1));
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(bad("expected 4 tab-separated fields"));
        }
        let tokens = fields[2]
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| bad("token id is not an integer")))
            .collect::<Result<Vec<_>>>()?;
        let features = match fields[3] {
            "-" => None,
            r => {
                let (file, id) = r.split_once(':').ok_or_else(|| bad("malformed feature reference"))?;
                if blobs.is_none() {
                    blobs = Some(checkpoint::load(&dir.join(file))?.into_iter().collect());
                }
                let f = blobs
                    .as_mut()
                    .and_then(|b| b.remove(id))
                    .ok_or_else(|| bad("feature reference not found"))?;
                Some(f)
            }
        };
        out.push(Utterance {
            id: fields[0].to_string(),
            domain: Domain::parse(fields[1])?,
            tokens,
            features,
        });
    }
    Ok(out)
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let mpath = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::format(format!("{}: {e}", mpath.display())))?;

    let lpath = dir.join(LEXICON);
    let lex: HashMap<String, Tensor> = checkpoint::load(&lpath)?.into_iter().collect();
    let noise = take(&lex, "noise", &lpath)?.data();
    if noise.len() != 3 {
        return Err(Error::format("lexicon noise entry must hold three values"));
    }
    let prototypes = PrototypeTable::new(
        take(&lex, "prototypes", &lpath)?.clone(),
        noise[0],
        (as_count(noise[1])?, as_count(noise[2])?),
    )?;
    let source = domain_from(&lex, "source", &lpath)?;
    let target = domain_from(&lex, "target", &lpath)?;

    let splits = Split::ALL
        .into_iter()
        .map(|s| Ok((s, read_split(dir, s)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        manifest,
        prototypes,
        source,
        target,
        splits,
    })
}
