//! The `.spec` file format: a UTF-8 key/value tree with sections.
//!
//! Grammar (one entry per line, `#` starts a comment, blank lines ignored):
//!
//! ```text
//! name = RaResNet-50
//!
//! [stem]
//! kind = postponed          # resnet | postponed | patchify | cifar
//! patch = 4                 # patchify only
//! stride = 1                # patchify only
//! out_width = 96
//!
//! [stages]
//! depths = 5, 8, 13, 1
//! widths = 36, 72, 140, 270
//!
//! [block]
//! kind = bottleneck         # basic | bottleneck
//! expansion = 4             # optional; defaults 1 (basic) / 4 (bottleneck)
//! se_ratio = 4              # optional; omit for no SE gate
//! act_mask = 1, 1, 1        # optional; defaults to all ones
//! norm_mask = 1, 1, 1       # optional; defaults to all ones
//!
//! [activation]
//! kind = silu               # relu | gelu | silu | prelu | psilu | pssilu
//!
//! [head]
//! classes = 1000
//! ```
//!
//! Unknown sections or keys are rejected with the offending line number.
//! [`emit_spec`] writes the canonical form (fixed section and key order,
//! explicit masks and expansion, `", "` separators); `parse(emit(s)) == s`
//! for every valid spec.

use super::{
    ActivationKind, ArchitectureSpec, BlockKind, BlockSpec, SpecError, StageSpec, StemKind,
    StemSpec,
};

/// Serializes a spec in canonical form.
pub fn emit_spec(spec: &ArchitectureSpec) -> String {
    let ints = |xs: &[usize]| -> String {
        xs.iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(", ")
    };
    let mask = |xs: &[bool]| -> String {
        xs.iter()
            .map(|&b| if b { "1" } else { "0" })
            .collect::<Vec<_>>()
            .join(", ")
    };

    let mut out = String::new();
    out.push_str(&format!("name = {}\n\n", spec.name));

    out.push_str("[stem]\n");
    let kind = match spec.stem.kind {
        StemKind::ResNet => "resnet",
        StemKind::Postponed => "postponed",
        StemKind::Patchify { .. } => "patchify",
        StemKind::Cifar => "cifar",
    };
    out.push_str(&format!("kind = {kind}\n"));
    if let StemKind::Patchify { patch, stride } = spec.stem.kind {
        out.push_str(&format!("patch = {patch}\n"));
        out.push_str(&format!("stride = {stride}\n"));
    }
    out.push_str(&format!("out_width = {}\n\n", spec.stem.out_width));

    out.push_str("[stages]\n");
    out.push_str(&format!("depths = {}\n", ints(&spec.depths())));
    out.push_str(&format!("widths = {}\n\n", ints(&spec.widths())));

    out.push_str("[block]\n");
    let bkind = match spec.block.kind {
        BlockKind::Basic => "basic",
        BlockKind::Bottleneck => "bottleneck",
    };
    out.push_str(&format!("kind = {bkind}\n"));
    out.push_str(&format!("expansion = {}\n", spec.block.expansion));
    if let Some(r) = spec.block.se_ratio {
        out.push_str(&format!("se_ratio = {r}\n"));
    }
    out.push_str(&format!("act_mask = {}\n", mask(&spec.block.act_mask)));
    out.push_str(&format!("norm_mask = {}\n\n", mask(&spec.block.norm_mask)));

    out.push_str("[activation]\n");
    out.push_str(&format!("kind = {}\n\n", spec.activation.name()));

    out.push_str("[head]\n");
    out.push_str(&format!("classes = {}\n", spec.num_classes));
    out
}

fn err(line: usize, msg: impl Into<String>) -> SpecError {
    SpecError::Parse {
        line,
        msg: msg.into(),
    }
}

#[derive(Default)]
struct RawSpec {
    name: Option<String>,
    stem_kind: Option<(String, usize)>,
    patch: Option<(usize, usize)>,
    stride: Option<(usize, usize)>,
    out_width: Option<usize>,
    depths: Option<Vec<usize>>,
    widths: Option<Vec<usize>>,
    block_kind: Option<String>,
    expansion: Option<usize>,
    se_ratio: Option<usize>,
    act_mask: Option<Vec<bool>>,
    norm_mask: Option<Vec<bool>>,
    activation: Option<(String, usize)>,
    classes: Option<usize>,
}

fn parse_usize(value: &str, line: usize, key: &str) -> Result<usize, SpecError> {
    value
        .trim()
        .parse::<usize>()
        .map_err(|_| err(line, format!("`{key}` expects a nonnegative integer, got `{value}`")))
}

fn parse_usize_list(value: &str, line: usize, key: &str) -> Result<Vec<usize>, SpecError> {
    if value.trim().is_empty() {
        return Err(err(line, format!("`{key}` list is empty")));
    }
    value
        .split(',')
        .map(|part| parse_usize(part, line, key))
        .collect()
}

fn parse_mask(value: &str, line: usize, key: &str) -> Result<Vec<bool>, SpecError> {
    value
        .split(',')
        .map(|part| match part.trim() {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(err(line, format!("`{key}` entries must be 0 or 1, got `{other}`"))),
        })
        .collect()
}

/// Parses the spec file format, rejecting unknown keys and enforcing the
/// type invariants of the assembled spec.
pub fn parse_spec(text: &str) -> Result<ArchitectureSpec, SpecError> {
    let spec = parse_spec_lenient(text)?;
    super::require_valid(&spec)?;
    Ok(spec)
}

/// Like [`parse_spec`] but skips invariant checks, so callers can list
/// violations of a syntactically well-formed spec themselves.
pub fn parse_spec_lenient(text: &str) -> Result<ArchitectureSpec, SpecError> {
    let mut raw = RawSpec::default();
    let mut section: Option<String> = None;
    let mut seen_sections: Vec<String> = Vec::new();

    for (idx, full_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match full_line.find('#') {
            Some(pos) => &full_line[..pos],
            None => full_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }

        if let Some(inner) = line.strip_prefix('[') {
            let name = inner
                .strip_suffix(']')
                .ok_or_else(|| err(line_no, "unterminated section header"))?
                .trim()
                .to_string();
            match name.as_str() {
                "stem" | "stages" | "block" | "activation" | "head" => {}
                other => return Err(err(line_no, format!("unknown section `[{other}]`"))),
            }
            if seen_sections.contains(&name) {
                return Err(err(line_no, format!("duplicate section `[{name}]`")));
            }
            seen_sections.push(name.clone());
            section = Some(name);
            continue;
        }

        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(line_no, "expected `key = value`"))?;
        let key = key.trim();
        let value = value.trim();

        match (section.as_deref(), key) {
            (None, "name") => raw.name = Some(value.to_string()),
            (None, other) => {
                return Err(err(line_no, format!("unknown top-level key `{other}`")))
            }
            (Some("stem"), "kind") => raw.stem_kind = Some((value.to_string(), line_no)),
            (Some("stem"), "patch") => {
                raw.patch = Some((parse_usize(value, line_no, "patch")?, line_no))
            }
            (Some("stem"), "stride") => {
                raw.stride = Some((parse_usize(value, line_no, "stride")?, line_no))
            }
            (Some("stem"), "out_width") => {
                raw.out_width = Some(parse_usize(value, line_no, "out_width")?)
            }
            (Some("stages"), "depths") => {
                raw.depths = Some(parse_usize_list(value, line_no, "depths")?)
            }
            (Some("stages"), "widths") => {
                raw.widths = Some(parse_usize_list(value, line_no, "widths")?)
            }
            (Some("block"), "kind") => raw.block_kind = Some(value.to_string()),
            (Some("block"), "expansion") => {
                raw.expansion = Some(parse_usize(value, line_no, "expansion")?)
            }
            (Some("block"), "se_ratio") => {
                raw.se_ratio = Some(parse_usize(value, line_no, "se_ratio")?)
            }
            (Some("block"), "act_mask") => {
                raw.act_mask = Some(parse_mask(value, line_no, "act_mask")?)
            }
            (Some("block"), "norm_mask") => {
                raw.norm_mask = Some(parse_mask(value, line_no, "norm_mask")?)
            }
            (Some("activation"), "kind") => raw.activation = Some((value.to_string(), line_no)),
            (Some("head"), "classes") => {
                raw.classes = Some(parse_usize(value, line_no, "classes")?)
            }
            (Some(section), other) => {
                return Err(err(
                    line_no,
                    format!("unknown key `{other}` in section `[{section}]`"),
                ))
            }
        }
    }

    assemble(raw)
}

fn missing(field: &str) -> SpecError {
    SpecError::MissingField(field.to_string())
}

fn assemble(raw: RawSpec) -> Result<ArchitectureSpec, SpecError> {
    let name = raw.name.ok_or_else(|| missing("name"))?;

    let (stem_kind, stem_line) = raw.stem_kind.ok_or_else(|| missing("stem"))?;
    let kind = match stem_kind.as_str() {
        "resnet" => StemKind::ResNet,
        "postponed" => StemKind::Postponed,
        "cifar" => StemKind::Cifar,
        "patchify" => {
            let (patch, _) = raw.patch.ok_or_else(|| missing("patch"))?;
            let (stride, _) = raw.stride.ok_or_else(|| missing("stride"))?;
            StemKind::Patchify { patch, stride }
        }
        other => return Err(err(stem_line, format!("unknown stem kind `{other}`"))),
    };
    if !matches!(kind, StemKind::Patchify { .. }) {
        if let Some((_, line)) = raw.patch {
            return Err(err(line, "`patch` is only valid for patchify stems"));
        }
        if let Some((_, line)) = raw.stride {
            return Err(err(line, "`stride` is only valid for patchify stems"));
        }
    }
    let stem = StemSpec {
        kind,
        out_width: raw.out_width.ok_or_else(|| missing("out_width"))?,
    };

    let depths = raw.depths.ok_or_else(|| missing("stages"))?;
    let widths = raw.widths.ok_or_else(|| missing("widths"))?;
    if depths.len() != widths.len() {
        return Err(SpecError::Invalid(format!(
            "stages: depths has {} entries but widths has {}",
            depths.len(),
            widths.len()
        )));
    }
    let stages: Vec<StageSpec> = depths
        .into_iter()
        .zip(widths)
        .map(|(d, w)| StageSpec::new(d, w))
        .collect();

    let block_kind = match raw.block_kind.ok_or_else(|| missing("block"))?.as_str() {
        "basic" => BlockKind::Basic,
        "bottleneck" => BlockKind::Bottleneck,
        other => return Err(SpecError::Invalid(format!("unknown block kind `{other}`"))),
    };
    let expansion = raw.expansion.unwrap_or(match block_kind {
        BlockKind::Basic => 1,
        BlockKind::Bottleneck => 4,
    });
    let nconv = block_kind.conv_count();
    let block = BlockSpec {
        kind: block_kind,
        expansion,
        se_ratio: raw.se_ratio,
        act_mask: raw.act_mask.unwrap_or_else(|| vec![true; nconv]),
        norm_mask: raw.norm_mask.unwrap_or_else(|| vec![true; nconv]),
    };

    let (act, act_line) = raw.activation.ok_or_else(|| missing("activation"))?;
    let activation = ActivationKind::ALL
        .into_iter()
        .find(|k| k.name() == act)
        .ok_or_else(|| err(act_line, format!("unknown activation `{act}`")))?;

    Ok(ArchitectureSpec {
        name,
        stem,
        stages,
        block,
        activation,
        num_classes: raw.classes.ok_or_else(|| missing("classes"))?,
    })
}

#[cfg(test)]
mod tests {
    use super::super::*;

    fn fixture_dir() -> std::path::PathBuf {
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../specs")
    }

    // "RaResNet-50" -> ra-resnet50.spec, "WRN-22-10" -> wrn-22-10.spec
    fn fixture_name(model: &str) -> String {
        let (prefix, rest) = match model.strip_prefix("Ra") {
            Some(rest) => ("ra-", rest),
            None => ("", model),
        };
        let base = rest.to_ascii_lowercase().replace("resnet-", "resnet");
        format!("{prefix}{base}.spec")
    }

    /// Maintenance helper: rewrites the fixture files from the builtin
    /// registry. Run with `cargo test -p rarch regenerate_fixture_files
    /// -- --ignored` after touching the registry or the emitter.
    #[test]
    #[ignore]
    fn regenerate_fixture_files() {
        std::fs::create_dir_all(fixture_dir()).unwrap();
        for name in builtin_spec_names() {
            let spec = builtin_spec(name).unwrap();
            let path = fixture_dir().join(fixture_name(name));
            std::fs::write(path, emit_spec(&spec)).unwrap();
        }
    }

    #[test]
    fn fixture_files_parse_cleanly_and_are_canonical() {
        for name in builtin_spec_names() {
            let path = fixture_dir().join(fixture_name(name));
            let text = std::fs::read_to_string(&path)
                .unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()));
            let spec = parse_spec(&text).unwrap();
            assert_eq!(spec, builtin_spec(name).unwrap(), "{name}");
            assert_eq!(text, emit_spec(&spec), "{name} fixture is not canonical");
            assert!(validate(&spec).is_empty());
        }
    }

    #[test]
    fn emit_then_parse_is_identity_on_builtins() {
        for name in builtin_spec_names() {
            let spec = builtin_spec(name).unwrap();
            let round = parse_spec(&emit_spec(&spec)).unwrap();
            assert_eq!(round, spec, "round-trip changed {name}");
        }
    }

    #[test]
    fn missing_stages_is_reported_as_missing_field() {
        let spec = builtin_spec("RaResNet-101").unwrap();
        let text: String = emit_spec(&spec)
            .lines()
            .filter(|l| !l.starts_with("depths") && !l.starts_with("widths") && *l != "[stages]")
            .map(|l| format!("{l}\n"))
            .collect();
        assert_eq!(
            parse_spec(&text).unwrap_err(),
            SpecError::MissingField("stages".to_string())
        );
    }

    #[test]
    fn unknown_key_is_rejected_with_line_number() {
        let text = "name = x\n\n[stem]\nkind = cifar\nflavor = spicy\nout_width = 8\n";
        match parse_spec(text).unwrap_err() {
            SpecError::Parse { line, msg } => {
                assert_eq!(line, 5);
                assert!(msg.contains("flavor"), "{msg}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn comments_and_spacing_are_tolerated() {
        let text = "\
# toy spec
name = Tiny   # label

[stem]
kind    =  cifar
out_width=8

[stages]
depths = 1,1
widths = 4, 4

[block]
kind = basic

[activation]
kind = relu

[head]
classes = 2
";
        let spec = parse_spec(text).unwrap();
        assert_eq!(spec.name, "Tiny");
        assert_eq!(spec.block.act_mask, vec![true, true]);
        assert_eq!(spec.block.expansion, 1);
    }

    #[test]
    fn invariant_violations_fail_parse() {
        let mut spec = builtin_spec("WRN-22-10").unwrap();
        spec.stages[1].width = 0;
        let text = emit_spec(&spec);
        match parse_spec(&text).unwrap_err() {
            SpecError::Invalid(msg) => assert!(msg.contains("width"), "{msg}"),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
