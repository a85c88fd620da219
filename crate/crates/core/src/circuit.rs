//! Gate-level circuit IR: gates, layers, circuits, structural metrics and the JSON format.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::error::{QacError, Result};

pub type C64 = Complex64;
pub type Matrix2 = [[C64; 2]; 2];

/// Tolerance for structural invariants (unitarity, normalization).
pub const STRUCT_TOL: f64 = 1e-12;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QubitId(pub usize);

impl QubitId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl From<usize> for QubitId {
    fn from(i: usize) -> Self {
        QubitId(i)
    }
}

impl fmt::Display for QubitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One-qubit state amp0|0> + amp1|1>.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct LocalState {
    pub amp0: C64,
    pub amp1: C64,
}

impl LocalState {
    pub fn new(amp0: C64, amp1: C64) -> Self {
        LocalState { amp0, amp1 }
    }

    pub fn real(a0: f64, a1: f64) -> Self {
        LocalState::new(C64::new(a0, 0.0), C64::new(a1, 0.0))
    }

    pub fn zero() -> Self {
        Self::real(1.0, 0.0)
    }

    pub fn one() -> Self {
        Self::real(0.0, 1.0)
    }

    pub fn plus() -> Self {
        Self::real(std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2)
    }

    pub fn minus() -> Self {
        Self::real(std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2)
    }

    /// sqrt(delta)|0> + sqrt(1-delta)|1>, the grid-column factor.
    pub fn biased(delta: f64) -> Self {
        Self::real(delta.sqrt(), (1.0 - delta).sqrt())
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amp0.norm_sqr() + self.amp1.norm_sqr()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm_sqr() - 1.0).abs() <= STRUCT_TOL
    }

    /// p = |<1|chi>|^2.
    pub fn p_one(&self) -> f64 {
        self.amp1.norm_sqr()
    }

    /// Canonical orthogonal complement (-conj(amp1), conj(amp0)).
    pub fn complement(&self) -> Self {
        LocalState::new(-self.amp1.conj(), self.amp0.conj())
    }

    pub fn amp(&self, bit: usize) -> C64 {
        if bit == 0 {
            self.amp0
        } else {
            self.amp1
        }
    }

    pub fn inner(&self, other: &LocalState) -> C64 {
        self.amp0.conj() * other.amp0 + self.amp1.conj() * other.amp1
    }

    pub fn apply(&self, m: &Matrix2) -> LocalState {
        LocalState::new(
            m[0][0] * self.amp0 + m[0][1] * self.amp1,
            m[1][0] * self.amp0 + m[1][1] * self.amp1,
        )
    }
}

pub mod mat2 {
    //! Small helpers for 2x2 complex matrices.
    use super::{Matrix2, C64};
    use std::f64::consts::FRAC_1_SQRT_2;

    const O: C64 = C64::new(0.0, 0.0);
    const L: C64 = C64::new(1.0, 0.0);

    pub fn identity() -> Matrix2 {
        [[L, O], [O, L]]
    }

    pub fn x() -> Matrix2 {
        [[O, L], [L, O]]
    }

    pub fn z() -> Matrix2 {
        [[L, O], [O, -L]]
    }

    pub fn h() -> Matrix2 {
        let s = C64::new(FRAC_1_SQRT_2, 0.0);
        [[s, s], [s, -s]]
    }

    pub fn mul(a: &Matrix2, b: &Matrix2) -> Matrix2 {
        let mut r = [[O; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                r[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        r
    }

    pub fn adjoint(a: &Matrix2) -> Matrix2 {
        [
            [a[0][0].conj(), a[1][0].conj()],
            [a[0][1].conj(), a[1][1].conj()],
        ]
    }

    pub fn scale(a: &Matrix2, s: C64) -> Matrix2 {
        [[a[0][0] * s, a[0][1] * s], [a[1][0] * s, a[1][1] * s]]
    }

    /// Max entrywise deviation of a^dagger a from the identity.
    pub fn unitarity_error(a: &Matrix2) -> f64 {
        let p = mul(&adjoint(a), a);
        let id = identity();
        let mut e: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                e = e.max((p[i][j] - id[i][j]).norm());
            }
        }
        e
    }

    pub fn max_diff(a: &Matrix2, b: &Matrix2) -> f64 {
        let mut e: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                e = e.max((a[i][j] - b[i][j]).norm());
            }
        }
        e
    }

    /// True if a equals b times some unit-modulus phase.
    pub fn eq_up_to_phase(a: &Matrix2, b: &Matrix2, tol: f64) -> bool {
        // pick the largest entry of b to fix the phase
        let (mut bi, mut bj, mut best) = (0, 0, -1.0);
        for i in 0..2 {
            for j in 0..2 {
                if b[i][j].norm() > best {
                    best = b[i][j].norm();
                    bi = i;
                    bj = j;
                }
            }
        }
        if best <= 0.0 {
            return false;
        }
        let ph = a[bi][bj] / b[bi][bj];
        if (ph.norm() - 1.0).abs() > tol {
            return false;
        }
        max_diff(a, &scale(b, ph)) <= tol
    }

    pub fn is_identity_up_to_phase(a: &Matrix2, tol: f64) -> bool {
        eq_up_to_phase(a, &identity(), tol)
    }

    /// Maps basis states to basis states up to phases (diagonal or anti-diagonal).
    pub fn is_monomial(a: &Matrix2, tol: f64) -> bool {
        (a[0][1].norm() <= tol && a[1][0].norm() <= tol)
            || (a[0][0].norm() <= tol && a[1][1].norm() <= tol)
    }

    pub fn is_antidiagonal(a: &Matrix2, tol: f64) -> bool {
        a[0][0].norm() <= tol && a[1][1].norm() <= tol
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Gate {
    OneQubit {
        qubit: QubitId,
        matrix: Matrix2,
    },
    /// |x, b> -> |x, b xor AND(x)>
    Toffoli {
        controls: Vec<QubitId>,
        target: QubitId,
    },
    /// |x, b> -> |x, b xor OR(x)>
    Or {
        controls: Vec<QubitId>,
        target: QubitId,
    },
    /// I - 2|chi><chi| with chi a product of one-qubit states.
    RTensor { factors: BTreeMap<QubitId, LocalState> },
    /// Restricted fanout gate: every target is XORed with the control.
    Fanout {
        control: QubitId,
        targets: Vec<QubitId>,
    },
}

fn ids(qs: &[usize]) -> Vec<QubitId> {
    let mut v: Vec<QubitId> = qs.iter().map(|&q| QubitId(q)).collect();
    v.sort();
    v
}

impl Gate {
    pub fn one_qubit(qubit: usize, matrix: Matrix2) -> Gate {
        Gate::OneQubit {
            qubit: QubitId(qubit),
            matrix,
        }
    }

    pub fn x(q: usize) -> Gate {
        Self::one_qubit(q, mat2::x())
    }

    pub fn h(q: usize) -> Gate {
        Self::one_qubit(q, mat2::h())
    }

    pub fn z(q: usize) -> Gate {
        Self::one_qubit(q, mat2::z())
    }

    /// Generalized Toffoli. No controls degenerates to X.
    pub fn toffoli(controls: &[usize], target: usize) -> Gate {
        if controls.is_empty() {
            return Self::x(target);
        }
        Gate::Toffoli {
            controls: ids(controls),
            target: QubitId(target),
        }
    }

    pub fn cnot(control: usize, target: usize) -> Gate {
        Self::toffoli(&[control], target)
    }

    /// OR gate. No controls is the identity.
    pub fn or(controls: &[usize], target: usize) -> Gate {
        if controls.is_empty() {
            return Self::one_qubit(target, mat2::identity());
        }
        Gate::Or {
            controls: ids(controls),
            target: QubitId(target),
        }
    }

    pub fn rtensor<I: IntoIterator<Item = (usize, LocalState)>>(factors: I) -> Gate {
        Gate::RTensor {
            factors: factors.into_iter().map(|(q, s)| (QubitId(q), s)).collect(),
        }
    }

    /// Controlled-Z written as R_{|11>}.
    pub fn cz(a: usize, b: usize) -> Gate {
        Self::rtensor([(a, LocalState::one()), (b, LocalState::one())])
    }

    pub fn fanout(control: usize, targets: &[usize]) -> Gate {
        match targets.len() {
            0 => Self::one_qubit(control, mat2::identity()),
            1 => Self::cnot(control, targets[0]),
            _ => Gate::Fanout {
                control: QubitId(control),
                targets: ids(targets),
            },
        }
    }

    /// Qubits acted on, in ascending order.
    pub fn support(&self) -> Vec<QubitId> {
        let mut v = match self {
            Gate::OneQubit { qubit, .. } => vec![*qubit],
            Gate::Toffoli { controls, target } | Gate::Or { controls, target } => {
                let mut v = controls.clone();
                v.push(*target);
                v
            }
            Gate::RTensor { factors } => factors.keys().copied().collect(),
            Gate::Fanout { control, targets } => {
                let mut v = targets.clone();
                v.push(*control);
                v
            }
        };
        v.sort();
        v
    }

    pub fn support_indices(&self) -> Vec<usize> {
        self.support().into_iter().map(QubitId::index).collect()
    }

    pub fn arity(&self) -> usize {
        match self {
            Gate::OneQubit { .. } => 1,
            Gate::Toffoli { controls, .. } | Gate::Or { controls, .. } => controls.len() + 1,
            Gate::RTensor { factors } => factors.len(),
            Gate::Fanout { targets, .. } => targets.len() + 1,
        }
    }

    pub fn is_multi_qubit(&self) -> bool {
        self.arity() >= 2
    }

    pub fn min_qubit(&self) -> usize {
        self.support().first().map(|q| q.0).unwrap_or(0)
    }

    /// The inverse gate. Toffoli, OR, R-tensor and fanout gates are self-inverse.
    pub fn inverse(&self) -> Gate {
        match self {
            Gate::OneQubit { qubit, matrix } => Gate::OneQubit {
                qubit: *qubit,
                matrix: mat2::adjoint(matrix),
            },
            g => g.clone(),
        }
    }

    /// Relabel qubits through `map` (old index -> new index).
    pub fn remap(&self, map: &[usize]) -> Gate {
        let m = |q: &QubitId| QubitId(map[q.0]);
        match self {
            Gate::OneQubit { qubit, matrix } => Gate::OneQubit {
                qubit: m(qubit),
                matrix: *matrix,
            },
            Gate::Toffoli { controls, target } => Gate::Toffoli {
                controls: sorted(controls.iter().map(m).collect()),
                target: m(target),
            },
            Gate::Or { controls, target } => Gate::Or {
                controls: sorted(controls.iter().map(m).collect()),
                target: m(target),
            },
            Gate::RTensor { factors } => Gate::RTensor {
                factors: factors.iter().map(|(q, s)| (m(q), *s)).collect(),
            },
            Gate::Fanout { control, targets } => Gate::Fanout {
                control: m(control),
                targets: sorted(targets.iter().map(m).collect()),
            },
        }
    }

    /// Maps computational basis states to basis states up to phase.
    pub fn is_classical(&self) -> bool {
        match self {
            Gate::OneQubit { matrix, .. } => mat2::is_monomial(matrix, 1e-9),
            Gate::Toffoli { .. } | Gate::Or { .. } | Gate::Fanout { .. } => true,
            Gate::RTensor { factors } => classical_rtensor(factors).is_some(),
        }
    }
}

fn sorted(mut v: Vec<QubitId>) -> Vec<QubitId> {
    v.sort();
    v
}

/// Bit action of a classical R-tensor gate.
#[derive(Clone, Debug, PartialEq)]
pub enum ClassicalRTensor {
    /// Only phases; bits unchanged.
    Diagonal,
    /// Flips `flip` when every other factor qubit holds its pattern bit.
    ControlledNot {
        pattern: Vec<(QubitId, u8)>,
        flip: QubitId,
    },
}

/// Decide whether R_chi permutes basis states, and how.
///
/// Each factor must be a basis state, except at most one factor with
/// |amp0| = |amp1|, which becomes a flipped bit.
pub fn classical_rtensor(factors: &BTreeMap<QubitId, LocalState>) -> Option<ClassicalRTensor> {
    let tol = 1e-9;
    let mut pattern = Vec::new();
    let mut flip = None;
    for (&q, s) in factors {
        let (a0, a1) = (s.amp0.norm(), s.amp1.norm());
        if a1 <= tol {
            pattern.push((q, 0u8));
        } else if a0 <= tol {
            pattern.push((q, 1u8));
        } else if (a0 - a1).abs() <= tol {
            if flip.is_some() {
                return None;
            }
            flip = Some(q);
        } else {
            return None;
        }
    }
    Some(match flip {
        None => ClassicalRTensor::Diagonal,
        Some(flip) => ClassicalRTensor::ControlledNot { pattern, flip },
    })
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Layer {
    pub gates: Vec<Gate>,
}

impl Layer {
    /// Builds a layer, sorting gates by minimum qubit index.
    pub fn new(mut gates: Vec<Gate>) -> Layer {
        gates.sort_by_key(Gate::min_qubit);
        Layer { gates }
    }

    pub fn has_multi_qubit(&self) -> bool {
        self.gates.iter().any(Gate::is_multi_qubit)
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct TopologyEntry {
    pub support: Vec<usize>,
    pub layer_index: usize,
}

pub type Topology = BTreeSet<TopologyEntry>;

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    QubitOutOfRange { layer: usize, qubit: usize },
    OverlappingSupports { layer: usize, qubit: usize },
    NonUnitary { layer: usize, qubit: usize, error: f64 },
    NonNormalizedLocalState { layer: usize, qubit: usize, norm_sqr: f64 },
    DuplicateControl { layer: usize, qubit: usize },
    ControlIsTarget { layer: usize, qubit: usize },
    EmptyRTensor { layer: usize },
    NonFinite { layer: usize },
    TargetOutOfRange { qubit: usize },
    DuplicateTarget { qubit: usize },
    NoQubits,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::QubitOutOfRange { layer, qubit } => {
                write!(f, "layer {layer}: qubit {qubit} index out of range")
            }
            Violation::OverlappingSupports { layer, qubit } => {
                write!(f, "layer {layer}: overlapping supports on qubit {qubit}")
            }
            Violation::NonUnitary { layer, qubit, error } => {
                write!(f, "layer {layer}: non-unitary matrix on qubit {qubit} (error {error:e})")
            }
            Violation::NonNormalizedLocalState {
                layer,
                qubit,
                norm_sqr,
            } => write!(
                f,
                "layer {layer}: non-normalized local state on qubit {qubit} (norm^2 = {norm_sqr})"
            ),
            Violation::DuplicateControl { layer, qubit } => {
                write!(f, "layer {layer}: duplicate control qubit {qubit}")
            }
            Violation::ControlIsTarget { layer, qubit } => {
                write!(f, "layer {layer}: qubit {qubit} is both control and target")
            }
            Violation::EmptyRTensor { layer } => write!(f, "layer {layer}: rtensor with no factors"),
            Violation::NonFinite { layer } => write!(f, "layer {layer}: non-finite amplitude"),
            Violation::TargetOutOfRange { qubit } => {
                write!(f, "designated target {qubit} index out of range")
            }
            Violation::DuplicateTarget { qubit } => write!(f, "designated target {qubit} repeated"),
            Violation::NoQubits => write!(f, "circuit has no qubits"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Circuit {
    pub num_qubits: usize,
    pub layers: Vec<Layer>,
    pub targets: Option<Vec<QubitId>>,
}

impl Circuit {
    pub fn new(num_qubits: usize) -> Circuit {
        Circuit {
            num_qubits,
            layers: Vec::new(),
            targets: None,
        }
    }

    pub fn with_targets(mut self, targets: &[usize]) -> Circuit {
        self.targets = Some(targets.iter().map(|&q| QubitId(q)).collect());
        self
    }

    pub fn push_layer(&mut self, gates: Vec<Gate>) -> &mut Self {
        self.layers.push(Layer::new(gates));
        self
    }

    pub fn gates(&self) -> impl Iterator<Item = &Gate> {
        self.layers.iter().flat_map(|l| l.gates.iter())
    }

    /// Target indices, defaulting to all qubits.
    pub fn target_indices(&self) -> Vec<usize> {
        match &self.targets {
            Some(t) => t.iter().map(|q| q.0).collect(),
            None => (0..self.num_qubits).collect(),
        }
    }

    /// Number of multi-qubit gates.
    pub fn size(&self) -> usize {
        self.gates().filter(|g| g.is_multi_qubit()).count()
    }

    /// Number of layers containing a multi-qubit gate.
    pub fn depth(&self) -> usize {
        self.layers.iter().filter(|l| l.has_multi_qubit()).count()
    }

    pub fn topology(&self) -> Topology {
        let mut t = Topology::new();
        let mut k = 0;
        for layer in &self.layers {
            if !layer.has_multi_qubit() {
                continue;
            }
            for g in layer.gates.iter().filter(|g| g.is_multi_qubit()) {
                t.insert(TopologyEntry {
                    support: g.support_indices(),
                    layer_index: k,
                });
            }
            k += 1;
        }
        t
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.num_qubits == 0 {
            out.push(Violation::NoQubits);
        }
        for (li, layer) in self.layers.iter().enumerate() {
            let mut seen = BTreeSet::new();
            for g in &layer.gates {
                validate_gate(g, li, self.num_qubits, &mut out);
                for q in g.support() {
                    if !seen.insert(q) {
                        out.push(Violation::OverlappingSupports {
                            layer: li,
                            qubit: q.0,
                        });
                    }
                }
            }
        }
        if let Some(ts) = &self.targets {
            let mut seen = BTreeSet::new();
            for t in ts {
                if t.0 >= self.num_qubits {
                    out.push(Violation::TargetOutOfRange { qubit: t.0 });
                }
                if !seen.insert(*t) {
                    out.push(Violation::DuplicateTarget { qubit: t.0 });
                }
            }
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(QacError::Invalid(v))
        }
    }

    /// Gates applied in reverse order, each inverted.
    pub fn inverse(&self) -> Circuit {
        Circuit {
            num_qubits: self.num_qubits,
            layers: self
                .layers
                .iter()
                .rev()
                .map(|l| Layer::new(l.gates.iter().map(Gate::inverse).collect()))
                .collect(),
            targets: self.targets.clone(),
        }
    }

    /// Appends the layers of `other` (same register) after this circuit.
    pub fn then(mut self, other: &Circuit) -> Circuit {
        assert_eq!(self.num_qubits, other.num_qubits, "register mismatch");
        self.layers.extend(other.layers.iter().cloned());
        self
    }

    /// Places the circuit on a larger register, qubit i going to `map[i]`.
    pub fn embed(&self, num_qubits: usize, map: &[usize]) -> Circuit {
        assert_eq!(map.len(), self.num_qubits);
        Circuit {
            num_qubits,
            layers: self
                .layers
                .iter()
                .map(|l| Layer::new(l.gates.iter().map(|g| g.remap(map)).collect()))
                .collect(),
            targets: self
                .targets
                .as_ref()
                .map(|t| t.iter().map(|q| QubitId(map[q.0])).collect()),
        }
    }

    pub fn to_json(&self) -> String {
        let wire = CircuitJson::from(self);
        serde_json::to_string_pretty(&wire).expect("circuit serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Circuit> {
        let wire: CircuitJson = serde_json::from_str(text).map_err(parse_error)?;
        wire.into_circuit()
    }
}

fn validate_gate(g: &Gate, li: usize, n: usize, out: &mut Vec<Violation>) {
    for q in g.support() {
        if q.0 >= n {
            out.push(Violation::QubitOutOfRange {
                layer: li,
                qubit: q.0,
            });
        }
    }
    match g {
        Gate::OneQubit { qubit, matrix } => {
            if matrix.iter().flatten().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                out.push(Violation::NonFinite { layer: li });
                return;
            }
            let e = mat2::unitarity_error(matrix);
            if e > STRUCT_TOL {
                out.push(Violation::NonUnitary {
                    layer: li,
                    qubit: qubit.0,
                    error: e,
                });
            }
        }
        Gate::Toffoli { controls, target } | Gate::Or { controls, target } => {
            let mut seen = BTreeSet::new();
            for c in controls {
                if !seen.insert(*c) {
                    out.push(Violation::DuplicateControl {
                        layer: li,
                        qubit: c.0,
                    });
                }
                if c == target {
                    out.push(Violation::ControlIsTarget {
                        layer: li,
                        qubit: c.0,
                    });
                }
            }
        }
        Gate::Fanout { control, targets } => {
            let mut seen = BTreeSet::new();
            for t in targets {
                if !seen.insert(*t) {
                    out.push(Violation::DuplicateControl {
                        layer: li,
                        qubit: t.0,
                    });
                }
                if t == control {
                    out.push(Violation::ControlIsTarget {
                        layer: li,
                        qubit: t.0,
                    });
                }
            }
        }
        Gate::RTensor { factors } => {
            if factors.is_empty() {
                out.push(Violation::EmptyRTensor { layer: li });
            }
            for (q, s) in factors {
                let ns = s.norm_sqr();
                if !ns.is_finite() {
                    out.push(Violation::NonFinite { layer: li });
                } else if (ns - 1.0).abs() > STRUCT_TOL {
                    out.push(Violation::NonNormalizedLocalState {
                        layer: li,
                        qubit: q.0,
                        norm_sqr: ns,
                    });
                }
            }
        }
    }
}

pub(crate) fn parse_error(e: serde_json::Error) -> QacError {
    QacError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

// ---- JSON wire format ----

/// Formats a float with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    if x == 0.0 {
        return "0.0".to_string();
    }
    let s = format!("{:.16e}", x);
    let (mant, exp) = s.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("exponent");
    let neg = mant.starts_with('-');
    let digits: String = mant.chars().filter(|c| c.is_ascii_digit()).collect();
    if !(-5..15).contains(&exp) {
        return s;
    }
    let mut out = String::new();
    if neg {
        out.push('-');
    }
    if exp >= 0 {
        let k = exp as usize + 1;
        out.push_str(&digits[..k]);
        out.push('.');
        if k < digits.len() {
            out.push_str(&digits[k..]);
        } else {
            out.push('0');
        }
    } else {
        out.push_str("0.");
        for _ in 0..(-exp - 1) {
            out.push('0');
        }
        out.push_str(&digits);
    }
    out
}

/// A float that serializes with 17 significant digits.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct F17(pub f64);

impl Serialize for F17 {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return Err(serde::ser::Error::custom("non-finite number"));
        }
        let raw = RawValue::from_string(fmt17(self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

impl<'de> Deserialize<'de> for F17 {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        f64::deserialize(d).map(F17)
    }
}

pub type ComplexJson = [F17; 2];

pub fn c_to_json(z: C64) -> ComplexJson {
    [F17(z.re), F17(z.im)]
}

pub fn c_from_json(z: &ComplexJson) -> C64 {
    C64::new(z[0].0, z[1].0)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FactorJson {
    qubit: usize,
    amp0: ComplexJson,
    amp1: ComplexJson,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind")]
enum GateJson {
    #[serde(rename = "u1")]
    U1 { qubit: usize, matrix: [ComplexJson; 4] },
    #[serde(rename = "toffoli")]
    Toffoli { controls: Vec<usize>, target: usize },
    #[serde(rename = "or")]
    Or { controls: Vec<usize>, target: usize },
    #[serde(rename = "rtensor")]
    RTensor { factors: Vec<FactorJson> },
    #[serde(rename = "fanout")]
    Fanout { control: usize, targets: Vec<usize> },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CircuitJson {
    num_qubits: usize,
    targets: Option<Vec<usize>>,
    layers: Vec<Vec<GateJson>>,
}

impl From<&Gate> for GateJson {
    fn from(g: &Gate) -> Self {
        let idx = |v: &[QubitId]| v.iter().map(|q| q.0).collect::<Vec<_>>();
        match g {
            Gate::OneQubit { qubit, matrix } => GateJson::U1 {
                qubit: qubit.0,
                matrix: [
                    c_to_json(matrix[0][0]),
                    c_to_json(matrix[0][1]),
                    c_to_json(matrix[1][0]),
                    c_to_json(matrix[1][1]),
                ],
            },
            Gate::Toffoli { controls, target } => GateJson::Toffoli {
                controls: idx(controls),
                target: target.0,
            },
            Gate::Or { controls, target } => GateJson::Or {
                controls: idx(controls),
                target: target.0,
            },
            Gate::RTensor { factors } => GateJson::RTensor {
                factors: factors
                    .iter()
                    .map(|(q, s)| FactorJson {
                        qubit: q.0,
                        amp0: c_to_json(s.amp0),
                        amp1: c_to_json(s.amp1),
                    })
                    .collect(),
            },
            Gate::Fanout { control, targets } => GateJson::Fanout {
                control: control.0,
                targets: idx(targets),
            },
        }
    }
}

impl From<&Circuit> for CircuitJson {
    fn from(c: &Circuit) -> Self {
        CircuitJson {
            num_qubits: c.num_qubits,
            targets: c.targets.as_ref().map(|t| t.iter().map(|q| q.0).collect()),
            layers: c
                .layers
                .iter()
                .map(|l| l.gates.iter().map(GateJson::from).collect())
                .collect(),
        }
    }
}

impl GateJson {
    fn into_gate(self) -> Result<Gate> {
        Ok(match self {
            GateJson::U1 { qubit, matrix } => Gate::OneQubit {
                qubit: QubitId(qubit),
                matrix: [
                    [c_from_json(&matrix[0]), c_from_json(&matrix[1])],
                    [c_from_json(&matrix[2]), c_from_json(&matrix[3])],
                ],
            },
            // keep the literal shape; validation reports malformed gates
            GateJson::Toffoli { controls, target } => Gate::Toffoli {
                controls: ids(&controls),
                target: QubitId(target),
            },
            GateJson::Or { controls, target } => Gate::Or {
                controls: ids(&controls),
                target: QubitId(target),
            },
            GateJson::RTensor { factors } => {
                let mut map = BTreeMap::new();
                for f in factors {
                    let s = LocalState::new(c_from_json(&f.amp0), c_from_json(&f.amp1));
                    if map.insert(QubitId(f.qubit), s).is_some() {
                        return Err(QacError::Parse {
                            line: 0,
                            column: 0,
                            message: format!("rtensor factor qubit {} repeated", f.qubit),
                        });
                    }
                }
                Gate::RTensor { factors: map }
            }
            GateJson::Fanout { control, targets } => Gate::Fanout {
                control: QubitId(control),
                targets: ids(&targets),
            },
        })
    }
}

impl CircuitJson {
    fn into_circuit(self) -> Result<Circuit> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in self.layers {
            let gates = l
                .into_iter()
                .map(GateJson::into_gate)
                .collect::<Result<Vec<_>>>()?;
            layers.push(Layer::new(gates));
        }
        Ok(Circuit {
            num_qubits: self.num_qubits,
            layers,
            targets: self
                .targets
                .map(|t| t.into_iter().map(QubitId).collect()),
        })
    }
}

/// The 4-qubit parity circuit with qubit 0 as the parity bit: three CNOTs into qubit 0.
pub fn parity4_example() -> Circuit {
    let mut c = Circuit::new(4);
    for j in 1..4 {
        c.push_layer(vec![Gate::cnot(j, 0)]);
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fig1_metrics() {
        let c = parity4_example();
        assert_eq!(c.size(), 3);
        assert_eq!(c.depth(), 3);
        let topo: Vec<_> = c
            .topology()
            .into_iter()
            .map(|e| (e.support, e.layer_index))
            .collect();
        assert_eq!(
            topo,
            vec![(vec![0, 1], 0), (vec![0, 2], 1), (vec![0, 3], 2)]
        );
    }

    #[test]
    fn one_qubit_only_has_no_size() {
        let mut c = Circuit::new(2);
        c.push_layer(vec![Gate::h(0), Gate::x(1)]);
        c.push_layer(vec![Gate::rtensor([(0, LocalState::plus())])]);
        assert_eq!(c.size(), 0);
        assert_eq!(c.depth(), 0);
        assert!(c.topology().is_empty());
        assert_eq!(Circuit::new(3).depth(), 0);
    }

    #[test]
    fn disjoint_cnots_share_layer_index() {
        let mut c = Circuit::new(4);
        c.push_layer(vec![Gate::cnot(2, 3), Gate::cnot(0, 1)]);
        let t: Vec<_> = c.topology().into_iter().collect();
        assert_eq!(t.len(), 2);
        assert!(t.iter().all(|e| e.layer_index == 0));
        // canonical order by min qubit
        assert_eq!(c.layers[0].gates[0].min_qubit(), 0);
    }

    #[test]
    fn degenerate_toffoli_is_x() {
        assert_eq!(Gate::toffoli(&[], 2), Gate::x(2));
    }

    #[test]
    fn validate_reports() {
        assert!(parity4_example().validate().is_empty());

        let mut c = Circuit::new(5);
        c.push_layer(vec![Gate::cnot(3, 0), Gate::cnot(3, 4)]);
        let v = c.validate();
        assert!(v
            .iter()
            .any(|x| x.to_string().contains("overlapping supports")));

        let mut c = Circuit::new(2);
        c.push_layer(vec![Gate::rtensor([(0, LocalState::real(1.0, 1.0))])]);
        let v = c.validate();
        assert!(v
            .iter()
            .any(|x| x.to_string().contains("non-normalized local state")));

        let mut c = Circuit::new(2);
        c.push_layer(vec![Gate::cnot(0, 2)]);
        assert!(matches!(c.validate()[0], Violation::QubitOutOfRange { .. }));

        let mut c = Circuit::new(1);
        let mut m = mat2::identity();
        m[0][0] = C64::new(2.0, 0.0);
        c.push_layer(vec![Gate::one_qubit(0, m)]);
        assert!(matches!(c.validate()[0], Violation::NonUnitary { .. }));
    }

    #[test]
    fn json_round_trip() {
        let c = parity4_example().with_targets(&[0]);
        let back = Circuit::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);

        let mut c = Circuit::new(3);
        c.push_layer(vec![
            Gate::h(0),
            Gate::rtensor([(1, LocalState::plus()), (2, LocalState::minus())]),
        ]);
        c.push_layer(vec![Gate::or(&[0, 1], 2)]);
        c.push_layer(vec![Gate::fanout(0, &[1, 2])]);
        let back = Circuit::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn seventeen_digits() {
        let mut c = Circuit::new(1);
        c.push_layer(vec![Gate::rtensor([(0, LocalState::plus())])]);
        let s = c.to_json();
        // the double nearest 2^{-1/2}, to 17 significant digits
        assert!(s.contains("0.70710678118654757"), "{s}");
        assert_eq!(fmt17(1.0), "1.0000000000000000");
        assert_eq!(fmt17(-0.25), "-0.25000000000000000");
        assert_eq!(fmt17(1e-7), "9.9999999999999995e-8");
        assert_eq!(fmt17(123.5), "123.50000000000000");
    }

    #[test]
    fn unknown_kind_is_parse_error() {
        let text = r#"{"num_qubits": 2, "targets": null,
  "layers": [[{"kind": "swap", "a": 0, "b": 1}]]}"#;
        match Circuit::from_json(text) {
            Err(QacError::Parse { line, .. }) => assert!(line >= 1),
            other => panic!("expected parse error, got {other:?}"),
        }
        match Circuit::from_json("{\"num_qubits\": 2,\n \"layers\": [[}") {
            Err(QacError::Parse { line, column, .. }) => {
                assert_eq!(line, 2);
                assert!(column > 0);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn classical_rtensor_cases() {
        let cz = Gate::cz(0, 1);
        assert!(cz.is_classical());
        let t = Gate::rtensor([
            (0, LocalState::one()),
            (1, LocalState::one()),
            (2, LocalState::minus()),
        ]);
        match t {
            Gate::RTensor { ref factors } => match classical_rtensor(factors) {
                Some(ClassicalRTensor::ControlledNot { flip, .. }) => assert_eq!(flip, QubitId(2)),
                other => panic!("{other:?}"),
            },
            _ => unreachable!(),
        }
        assert!(!Gate::rtensor([(0, LocalState::plus()), (1, LocalState::plus())]).is_classical());
        assert!(!Gate::h(0).is_classical());
    }
}
