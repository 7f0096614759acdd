//! Structure definitions: struts, cables, anchors, and their on-disk format.
//!
//! A structure with `m_b` struts has `n = 2 m_b` nodes. Node indices are
//! 0-based in memory: strut `i` owns node `i` (its plus end) and node
//! `i + m_b` (its minus end). The text format and all exported files use
//! 1-based ids; conversion happens at the parse/serialize boundary.
//!
//! # File format
//!
//! UTF-8 text, `#` starts a comment anywhere on a line, blank lines are
//! ignored. Three sections:
//!
//! ```text
//! [meta]
//! name = tm40                     # optional structure name
//! anchor_centroid = 17,18,19,20   # optional strut ids whose centre-of-mass
//!                                 # is pinned at the origin
//! length_top = 1,2,3,4            # optional node groups used by the
//! length_base = 37,38,39,40       # structure length metric
//!
//! [struts]
//! # id  length_m  freeze  [label]
//! 1  0.33  -
//! 2  0.39  pt  base_leg
//!
//! [cables]
//! # id  node_a  node_b  stiffness  natural_length_m  class  [label]
//! 1  1  2  1.0  0.0  passive
//! ```
//!
//! `freeze` is `-` (free), `p` (centre frozen), `t` (yaw frozen), or `pt`.
//! Ids must be consecutive starting at 1. A cable may not join the two nodes
//! of one strut, and its class is `active` or `passive`.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::Vec3;

/// Error raised while parsing or validating a structure definition.
#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    /// The text could not be read as the documented grammar.
    #[error("syntax error on line {line}: {message}")]
    Syntax { line: usize, message: String },
    /// The document parsed but violates a structural invariant.
    #[error("invalid structure ({element}): {message}")]
    Invariant { element: String, message: String },
}

impl ModelError {
    fn syntax(line: usize, message: impl Into<String>) -> Self {
        ModelError::Syntax {
            line,
            message: message.into(),
        }
    }

    fn invariant(element: impl Into<String>, message: impl Into<String>) -> Self {
        ModelError::Invariant {
            element: element.into(),
            message: message.into(),
        }
    }
}

/// Cable role. Passive cables are the stiff tendons that define the
/// geometry; active cables are the softer actuated ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CableClass {
    Passive,
    Active,
}

impl CableClass {
    pub fn as_str(self) -> &'static str {
        match self {
            CableClass::Passive => "passive",
            CableClass::Active => "active",
        }
    }
}

impl FromStr for CableClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "passive" => Ok(CableClass::Passive),
            "active" => Ok(CableClass::Active),
            other => Err(format!("unknown cable class `{other}`")),
        }
    }
}

/// One elastic cable between two nodes of different struts.
#[derive(Debug, Clone, PartialEq)]
pub struct CableSpec {
    /// 0-based node index of the tail end. Cable vectors point a -> b.
    pub node_a: usize,
    /// 0-based node index of the head end.
    pub node_b: usize,
    /// Spring constant, N/m. Non-negative.
    pub stiffness: f64,
    /// Natural (rest) length, m. Non-negative; zero models fully
    /// pre-tensioned cables.
    pub natural_length: f64,
    pub class: CableClass,
    pub label: Option<String>,
}

/// Which degrees of freedom are pinned during estimation.
///
/// Freezing removes the gauge freedom of the energy (global translation and
/// rotation about the gravity axis). A frozen centre stays at the origin, a
/// frozen yaw stays at zero. `centroid_struts`, when non-empty, instead pins
/// the centre-of-mass of the listed struts at the origin while the struts
/// themselves remain free; it may not be combined with frozen centres.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnchorSpec {
    pub freeze_center: Vec<bool>,
    pub freeze_yaw: Vec<bool>,
    /// 0-based strut indices of the centroid anchor group.
    pub centroid_struts: Vec<usize>,
}

impl AnchorSpec {
    /// No anchoring at all for `strut_count` struts.
    pub fn free(strut_count: usize) -> Self {
        AnchorSpec {
            freeze_center: vec![false; strut_count],
            freeze_yaw: vec![false; strut_count],
            centroid_struts: Vec::new(),
        }
    }
}

/// Node groups used by the structure length metric: the distance between the
/// mean of `top` and the mean of `base` node positions.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthMarkers {
    /// 0-based node indices.
    pub top: Vec<usize>,
    pub base: Vec<usize>,
}

/// A complete structure definition.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureSpec {
    pub name: Option<String>,
    /// Strut lengths in meters, one per strut. The index is the strut id.
    pub strut_lengths: Vec<f64>,
    pub strut_labels: Vec<Option<String>>,
    pub cables: Vec<CableSpec>,
    pub anchors: AnchorSpec,
    pub length_markers: Option<LengthMarkers>,
}

impl StructureSpec {
    /// Build a spec with free anchors and no labels, then validate it.
    pub fn new(strut_lengths: Vec<f64>, cables: Vec<CableSpec>) -> Result<Self, ModelError> {
        let n = strut_lengths.len();
        let spec = StructureSpec {
            name: None,
            strut_labels: vec![None; n],
            anchors: AnchorSpec::free(n),
            strut_lengths,
            cables,
            length_markers: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn strut_count(&self) -> usize {
        self.strut_lengths.len()
    }

    pub fn cable_count(&self) -> usize {
        self.cables.len()
    }

    pub fn node_count(&self) -> usize {
        2 * self.strut_lengths.len()
    }

    /// The strut owning a node.
    pub fn node_strut(&self, node: usize) -> usize {
        if node < self.strut_count() {
            node
        } else {
            node - self.strut_count()
        }
    }

    /// (plus end, minus end) node indices of a strut.
    pub fn strut_nodes(&self, strut: usize) -> (usize, usize) {
        (strut, strut + self.strut_count())
    }

    /// Check every structural invariant, reporting the first violation.
    pub fn validate(&self) -> Result<(), ModelError> {
        let m_b = self.strut_count();
        if m_b == 0 {
            return Err(ModelError::invariant("structure", "needs at least one strut"));
        }
        if self.cables.is_empty() {
            return Err(ModelError::invariant("structure", "needs at least one cable"));
        }
        for (i, len) in self.strut_lengths.iter().enumerate() {
            if !(len.is_finite() && *len > 0.0) {
                return Err(ModelError::invariant(
                    format!("strut {}", i + 1),
                    format!("length must be finite and positive, got {len}"),
                ));
            }
        }
        if self.strut_labels.len() != m_b {
            return Err(ModelError::invariant(
                "structure",
                "one label slot per strut required",
            ));
        }
        if self.anchors.freeze_center.len() != m_b || self.anchors.freeze_yaw.len() != m_b {
            return Err(ModelError::invariant(
                "anchors",
                "freeze flag lists must have one entry per strut",
            ));
        }
        let n = self.node_count();
        for (k, cable) in self.cables.iter().enumerate() {
            let id = format!("cable {}", k + 1);
            if cable.node_a >= n || cable.node_b >= n {
                return Err(ModelError::invariant(
                    id,
                    format!("node index out of range (structure has {n} nodes)"),
                ));
            }
            if cable.node_a == cable.node_b {
                return Err(ModelError::invariant(id, "joins a node to itself"));
            }
            if self.node_strut(cable.node_a) == self.node_strut(cable.node_b) {
                return Err(ModelError::invariant(
                    id,
                    format!(
                        "joins both nodes of strut {}",
                        self.node_strut(cable.node_a) + 1
                    ),
                ));
            }
            if !(cable.stiffness.is_finite() && cable.stiffness >= 0.0) {
                return Err(ModelError::invariant(id, "stiffness must be finite and >= 0"));
            }
            if !(cable.natural_length.is_finite() && cable.natural_length >= 0.0) {
                return Err(ModelError::invariant(
                    id,
                    "natural length must be finite and >= 0",
                ));
            }
        }
        let mut seen = vec![false; m_b];
        for &s in &self.anchors.centroid_struts {
            if s >= m_b {
                return Err(ModelError::invariant(
                    "anchors",
                    format!("centroid group references strut {} of {m_b}", s + 1),
                ));
            }
            if seen[s] {
                return Err(ModelError::invariant(
                    "anchors",
                    format!("strut {} listed twice in centroid group", s + 1),
                ));
            }
            seen[s] = true;
            if self.anchors.freeze_center[s] {
                return Err(ModelError::invariant(
                    "anchors",
                    format!(
                        "strut {} cannot be both centroid-anchored and centre-frozen",
                        s + 1
                    ),
                ));
            }
        }
        if let Some(markers) = &self.length_markers {
            for (which, group) in [("length_top", &markers.top), ("length_base", &markers.base)] {
                if group.is_empty() {
                    return Err(ModelError::invariant(which, "node group is empty"));
                }
                let mut seen = vec![false; n];
                for &node in group {
                    if node >= n {
                        return Err(ModelError::invariant(
                            which,
                            format!("node index out of range (structure has {n} nodes)"),
                        ));
                    }
                    if seen[node] {
                        return Err(ModelError::invariant(
                            which,
                            format!("node {} listed twice", node + 1),
                        ));
                    }
                    seen[node] = true;
                }
            }
        }
        Ok(())
    }
}

/// Signed cable-node incidence: one row per cable with -1 at `node_a` and
/// +1 at `node_b`, stored sparsely.
///
/// Applying a row to node positions yields the cable vector
/// `v_k = n_b - n_a`; applying the transpose scatters per-cable quantities
/// back onto nodes. The same row pattern acts on each coordinate axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityMatrix {
    node_count: usize,
    rows: Vec<(usize, usize)>,
}

impl ConnectivityMatrix {
    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn cable_count(&self) -> usize {
        self.rows.len()
    }

    /// The two non-zero entries of row `k` as (node, coefficient).
    pub fn row(&self, k: usize) -> [(usize, f64); 2] {
        let (a, b) = self.rows[k];
        [(a, -1.0), (b, 1.0)]
    }

    /// Endpoint node indices (tail, head) of cable `k`.
    pub fn endpoints(&self, k: usize) -> (usize, usize) {
        self.rows[k]
    }

    /// Cable vectors `v_k = n_b - n_a` for the given node positions.
    pub fn cable_vectors(&self, nodes: &[Vec3]) -> Vec<Vec3> {
        assert_eq!(nodes.len(), self.node_count, "node count mismatch");
        self.rows
            .iter()
            .map(|&(a, b)| nodes[b] - nodes[a])
            .collect()
    }

    /// Transpose application: accumulate one vector per cable onto its two
    /// endpoint nodes (`+` at the head, `-` at the tail).
    pub fn scatter_to_nodes(&self, per_cable: &[Vec3]) -> Vec<Vec3> {
        assert_eq!(per_cable.len(), self.rows.len(), "cable count mismatch");
        let mut out = vec![Vec3::zeros(); self.node_count];
        for (&(a, b), f) in self.rows.iter().zip(per_cable) {
            out[a] -= f;
            out[b] += f;
        }
        out
    }
}

/// Build the incidence structure of a validated spec.
pub fn build_connectivity(spec: &StructureSpec) -> ConnectivityMatrix {
    ConnectivityMatrix {
        node_count: spec.node_count(),
        rows: spec.cables.iter().map(|c| (c.node_a, c.node_b)).collect(),
    }
}

/// Parse a structure definition document.
///
/// Syntax problems report the 1-based line number; structural problems
/// report the offending element. The returned spec is validated.
pub fn parse_structure(text: &str) -> Result<StructureSpec, ModelError> {
    #[derive(PartialEq, Clone, Copy)]
    enum Section {
        None,
        Meta,
        Struts,
        Cables,
    }

    struct StrutRow {
        length: f64,
        freeze_center: bool,
        freeze_yaw: bool,
        label: Option<String>,
    }

    let mut section = Section::None;
    let mut name = None;
    let mut centroid_ids: Option<(usize, Vec<usize>)> = None;
    let mut top_ids: Option<(usize, Vec<usize>)> = None;
    let mut base_ids: Option<(usize, Vec<usize>)> = None;
    let mut struts: Vec<StrutRow> = Vec::new();
    let mut cables: Vec<CableSpec> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }

        if let Some(header) = line.strip_prefix('[') {
            let Some(header) = header.strip_suffix(']') else {
                return Err(ModelError::syntax(line_no, "unterminated section header"));
            };
            section = match header {
                "meta" => Section::Meta,
                "struts" => Section::Struts,
                "cables" => Section::Cables,
                other => {
                    return Err(ModelError::syntax(
                        line_no,
                        format!("unknown section `[{other}]`"),
                    ))
                }
            };
            continue;
        }

        match section {
            Section::None => {
                return Err(ModelError::syntax(
                    line_no,
                    "content before the first section header",
                ));
            }
            Section::Meta => {
                let Some((key, value)) = line.split_once('=') else {
                    return Err(ModelError::syntax(line_no, "expected `key = value`"));
                };
                let key = key.trim();
                let value = value.trim();
                match key {
                    "name" => name = Some(value.to_string()),
                    "anchor_centroid" => {
                        centroid_ids = Some((line_no, parse_id_list(value, line_no)?))
                    }
                    "length_top" => top_ids = Some((line_no, parse_id_list(value, line_no)?)),
                    "length_base" => base_ids = Some((line_no, parse_id_list(value, line_no)?)),
                    other => {
                        return Err(ModelError::syntax(
                            line_no,
                            format!("unknown meta key `{other}`"),
                        ));
                    }
                }
            }
            Section::Struts => {
                let tokens: Vec<&str> = line.split_whitespace().collect();
                if tokens.len() < 2 || tokens.len() > 4 {
                    return Err(ModelError::syntax(
                        line_no,
                        "expected `id length_m [freeze] [label]`",
                    ));
                }
                let id: usize = parse_field(tokens[0], "strut id", line_no)?;
                if id != struts.len() + 1 {
                    return Err(ModelError::syntax(
                        line_no,
                        format!("strut ids must be consecutive; expected {}", struts.len() + 1),
                    ));
                }
                let length: f64 = parse_field(tokens[1], "strut length", line_no)?;
                let freeze = tokens.get(2).copied().unwrap_or("-");
                let (freeze_center, freeze_yaw) = match freeze {
                    "-" => (false, false),
                    "p" => (true, false),
                    "t" => (false, true),
                    "pt" => (true, true),
                    other => {
                        return Err(ModelError::syntax(
                            line_no,
                            format!("freeze flags must be one of `-`, `p`, `t`, `pt`, got `{other}`"),
                        ));
                    }
                };
                struts.push(StrutRow {
                    length,
                    freeze_center,
                    freeze_yaw,
                    label: tokens.get(3).map(|s| s.to_string()),
                });
            }
            Section::Cables => {
                let tokens: Vec<&str> = line.split_whitespace().collect();
                if tokens.len() < 6 || tokens.len() > 7 {
                    return Err(ModelError::syntax(
                        line_no,
                        "expected `id node_a node_b stiffness natural_length_m class [label]`",
                    ));
                }
                let id: usize = parse_field(tokens[0], "cable id", line_no)?;
                if id != cables.len() + 1 {
                    return Err(ModelError::syntax(
                        line_no,
                        format!("cable ids must be consecutive; expected {}", cables.len() + 1),
                    ));
                }
                let node_a: usize = parse_field(tokens[1], "node_a", line_no)?;
                let node_b: usize = parse_field(tokens[2], "node_b", line_no)?;
                if node_a == 0 || node_b == 0 {
                    return Err(ModelError::syntax(line_no, "node ids are 1-based"));
                }
                let class = CableClass::from_str(tokens[5])
                    .map_err(|e| ModelError::syntax(line_no, e))?;
                cables.push(CableSpec {
                    node_a: node_a - 1,
                    node_b: node_b - 1,
                    stiffness: parse_field(tokens[3], "stiffness", line_no)?,
                    natural_length: parse_field(tokens[4], "natural length", line_no)?,
                    class,
                    label: tokens.get(6).map(|s| s.to_string()),
                });
            }
        }
    }

    let strut_count = struts.len();
    let mut anchors = AnchorSpec::free(strut_count);
    for (i, row) in struts.iter().enumerate() {
        anchors.freeze_center[i] = row.freeze_center;
        anchors.freeze_yaw[i] = row.freeze_yaw;
    }
    if let Some((line, ids)) = centroid_ids {
        anchors.centroid_struts = to_zero_based(ids, strut_count, "strut", line)?;
    }
    let length_markers = match (top_ids, base_ids) {
        (None, None) => None,
        (Some((line, top)), Some((_, base))) => Some(LengthMarkers {
            top: to_zero_based(top, 2 * strut_count, "node", line)?,
            base: to_zero_based(base, 2 * strut_count, "node", line)?,
        }),
        (Some((line, _)), None) | (None, Some((line, _))) => {
            return Err(ModelError::syntax(
                line,
                "length_top and length_base must be given together",
            ));
        }
    };

    let spec = StructureSpec {
        name,
        strut_lengths: struts.iter().map(|s| s.length).collect(),
        strut_labels: struts.into_iter().map(|s| s.label).collect(),
        cables,
        anchors,
        length_markers,
    };
    spec.validate()?;
    Ok(spec)
}

fn parse_field<T: FromStr>(token: &str, what: &str, line: usize) -> Result<T, ModelError> {
    token
        .parse()
        .map_err(|_| ModelError::syntax(line, format!("cannot parse {what} from `{token}`")))
}

fn parse_id_list(value: &str, line: usize) -> Result<Vec<usize>, ModelError> {
    value
        .split(',')
        .map(|tok| parse_field(tok.trim(), "id", line))
        .collect()
}

fn to_zero_based(
    ids: Vec<usize>,
    count: usize,
    what: &str,
    line: usize,
) -> Result<Vec<usize>, ModelError> {
    ids.into_iter()
        .map(|id| {
            if id == 0 || id > count {
                Err(ModelError::syntax(
                    line,
                    format!("{what} id {id} out of range 1..={count}"),
                ))
            } else {
                Ok(id - 1)
            }
        })
        .collect()
}

/// Render a spec in the documented text format.
///
/// `parse_structure(&serialize_structure(spec))` reproduces `spec` exactly,
/// including cable order. Floats are written in shortest round-trip form.
pub fn serialize_structure(spec: &StructureSpec) -> String {
    let mut out = String::new();
    out.push_str("[meta]\n");
    if let Some(name) = &spec.name {
        let _ = writeln!(out, "name = {name}");
    }
    if !spec.anchors.centroid_struts.is_empty() {
        let _ = writeln!(
            out,
            "anchor_centroid = {}",
            join_one_based(&spec.anchors.centroid_struts)
        );
    }
    if let Some(markers) = &spec.length_markers {
        let _ = writeln!(out, "length_top = {}", join_one_based(&markers.top));
        let _ = writeln!(out, "length_base = {}", join_one_based(&markers.base));
    }

    out.push_str("\n[struts]\n# id  length_m  freeze  [label]\n");
    for i in 0..spec.strut_count() {
        let freeze = match (spec.anchors.freeze_center[i], spec.anchors.freeze_yaw[i]) {
            (false, false) => "-",
            (true, false) => "p",
            (false, true) => "t",
            (true, true) => "pt",
        };
        let _ = write!(out, "{}  {}  {}", i + 1, spec.strut_lengths[i], freeze);
        if let Some(label) = &spec.strut_labels[i] {
            let _ = write!(out, "  {label}");
        }
        out.push('\n');
    }

    out.push_str("\n[cables]\n# id  node_a  node_b  stiffness  natural_length_m  class  [label]\n");
    for (k, cable) in spec.cables.iter().enumerate() {
        let _ = write!(
            out,
            "{}  {}  {}  {}  {}  {}",
            k + 1,
            cable.node_a + 1,
            cable.node_b + 1,
            cable.stiffness,
            cable.natural_length,
            cable.class.as_str()
        );
        if let Some(label) = &cable.label {
            let _ = write!(out, "  {label}");
        }
        out.push('\n');
    }
    out
}

fn join_one_based(ids: &[usize]) -> String {
    ids.iter()
        .map(|&i| (i + 1).to_string())
        .collect::<Vec<_>>()
        .join(",")
}
