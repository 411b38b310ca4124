//! Vasculature network data model.
//!
//! A network is a set of 1D vessels joined at junctions, fed by prescribed
//! inflow waveforms and terminated by three-element Windkessel outlets. The
//! tube law `p = p_ext + β(√A − √A0)` closes the 1D equations.
//!
//! Networks are read from a TOML document (all SI units):
//!
//! ```toml
//! [blood]
//! density = 1050.0
//! viscosity = 0.004
//!
//! [vessel.1]
//! length = 0.1703
//! nodes = 100
//! area = 1.36e-5            # constant, or [c0, c1, ...] polynomial in x
//! beta = 6.97e7             # or: wall = { thickness = .., young_modulus = .., poisson_ratio = .. }
//!
//! [[junction]]
//! parent = 1                # or parents = [..] for confluences
//! children = [2, 3]
//!
//! [inlet.1]
//! period = 0.8
//! a0 = 0.5
//! peaks = [3.0]
//! centers = [0.2]
//! widths = [5e-3]
//!
//! [outlet.2]
//! total_resistance = 1.19e10
//! compliance = 0.3428e-10
//! ```

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::ensemble::InletWaveform;
use crate::error::{Error, Result};

pub type VesselId = u32;

/// Friction coefficient magnitude for the assumed axial velocity profile, `22π`.
pub const FRICTION_PROFILE: f64 = 22.0 * PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BloodProperties {
    /// kg/m³
    pub density: f64,
    /// Pa·s
    pub viscosity: f64,
}

impl Default for BloodProperties {
    fn default() -> Self {
        BloodProperties {
            density: 1050.0,
            viscosity: 4e-3,
        }
    }
}

impl BloodProperties {
    pub fn validate(&self) -> Result<()> {
        if !(self.density > 0.0 && self.density.is_finite()) {
            return Err(Error::Domain(format!("blood density must be positive, got {}", self.density)));
        }
        if !(self.viscosity >= 0.0 && self.viscosity.is_finite()) {
            return Err(Error::Domain(format!(
                "blood viscosity must be non-negative, got {}",
                self.viscosity
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WallProperties {
    /// m
    pub thickness: f64,
    /// Pa
    pub young_modulus: f64,
    pub poisson_ratio: f64,
}

/// Wall stiffness `β = √π·h·E / ((1 − ν²)·A0)`.
pub fn compute_beta(wall: &WallProperties, area0: f64) -> Result<f64> {
    if !(area0 > 0.0) {
        return Err(Error::Domain(format!("equilibrium area must be positive, got {area0}")));
    }
    if !(wall.thickness > 0.0) || !(wall.young_modulus > 0.0) {
        return Err(Error::Domain("wall thickness and Young modulus must be positive".into()));
    }
    if !(0.0..1.0).contains(&wall.poisson_ratio) {
        return Err(Error::Domain(format!(
            "Poisson ratio must lie in [0, 1), got {}",
            wall.poisson_ratio
        )));
    }
    let nu = wall.poisson_ratio;
    Ok(PI.sqrt() * wall.thickness * wall.young_modulus / ((1.0 - nu * nu) * area0))
}

/// Equilibrium area `A0(x) = Σ c_k x^k` over `[0, L]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "AreaRepr", into = "AreaRepr")]
pub struct AreaProfile {
    coefficients: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum AreaRepr {
    Constant(f64),
    Polynomial(Vec<f64>),
}

impl From<AreaRepr> for AreaProfile {
    fn from(r: AreaRepr) -> Self {
        match r {
            AreaRepr::Constant(a) => AreaProfile::constant(a),
            AreaRepr::Polynomial(c) => AreaProfile::polynomial(c),
        }
    }
}

impl From<AreaProfile> for AreaRepr {
    fn from(p: AreaProfile) -> Self {
        match p.coefficients.as_slice() {
            [a] => AreaRepr::Constant(*a),
            _ => AreaRepr::Polynomial(p.coefficients),
        }
    }
}

impl AreaProfile {
    pub fn constant(area: f64) -> Self {
        AreaProfile { coefficients: vec![area] }
    }

    pub fn polynomial(coefficients: Vec<f64>) -> Self {
        AreaProfile { coefficients }
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        AreaProfile {
            coefficients: self.coefficients.iter().map(|c| c * factor).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vessel {
    pub id: VesselId,
    /// m
    pub length: f64,
    /// Number of uniform grid nodes, including both ends.
    pub nodes: usize,
    pub area: AreaProfile,
    /// Pa/m
    pub beta: f64,
    /// Pa
    pub external_pressure: f64,
}

impl Vessel {
    pub fn new(id: VesselId, length: f64, nodes: usize, area0: f64, beta: f64) -> Self {
        Vessel {
            id,
            length,
            nodes,
            area: AreaProfile::constant(area0),
            beta,
            external_pressure: 0.0,
        }
    }

    pub fn dx(&self) -> f64 {
        self.length / (self.nodes - 1) as f64
    }

    pub fn grid(&self) -> Vec<f64> {
        uniform_grid(self.length, self.nodes)
    }

    pub fn area0(&self, x: f64) -> f64 {
        self.area.eval(x)
    }

    pub fn tube_law(&self, x: f64) -> TubeLaw {
        TubeLaw::new(self.beta, self.area0(x), self.external_pressure)
    }

    fn validate(&self) -> Result<()> {
        let invalid = |field: &'static str, reason: String| Error::Invalid {
            vessel: self.id,
            field,
            reason,
        };
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(invalid("length", format!("must be positive, got {}", self.length)));
        }
        if self.nodes < 3 {
            return Err(invalid("nodes", format!("need at least 3, got {}", self.nodes)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(invalid("beta", format!("must be positive, got {}", self.beta)));
        }
        if !self.external_pressure.is_finite() {
            return Err(invalid("external_pressure", "must be finite".into()));
        }
        for x in self.grid() {
            let a = self.area0(x);
            if !(a > 0.0 && a.is_finite()) {
                return Err(invalid("area", format!("A0({x}) = {a} is not positive")));
            }
        }
        Ok(())
    }
}

/// `n` equispaced points on `[0, length]`, with the last point exactly `length`.
pub fn uniform_grid(length: f64, n: usize) -> Vec<f64> {
    let dx = length / (n - 1) as f64;
    (0..n).map(|j| if j + 1 == n { length } else { j as f64 * dx }).collect()
}

/// Local pressure–area relation at one point of a vessel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TubeLaw {
    pub beta: f64,
    pub area0: f64,
    pub external_pressure: f64,
}

impl TubeLaw {
    pub fn new(beta: f64, area0: f64, external_pressure: f64) -> Self {
        TubeLaw {
            beta,
            area0,
            external_pressure,
        }
    }

    /// `p = p_ext + β(√A − √A0)`.
    pub fn pressure(&self, area: f64) -> Result<f64> {
        if !(area > 0.0) {
            return Err(Error::Domain(format!("area must be positive, got {area}")));
        }
        Ok(self.pressure_unchecked(area))
    }

    #[inline]
    pub fn pressure_unchecked(&self, area: f64) -> f64 {
        self.external_pressure + self.beta * (area.sqrt() - self.area0.sqrt())
    }

    pub fn wave_speed(&self, area: f64, blood: &BloodProperties) -> Result<f64> {
        if !(area > 0.0) {
            return Err(Error::Domain(format!("area must be positive, got {area}")));
        }
        Ok(wave_speed_unchecked(self.beta, area, blood.density))
    }

    /// Wave speed at the equilibrium area.
    pub fn reference_wave_speed(&self, blood: &BloodProperties) -> f64 {
        wave_speed_unchecked(self.beta, self.area0, blood.density)
    }
}

/// `c = √(β√A / (2ρ))`, the characteristic speed of the tube law.
#[inline]
pub fn wave_speed_unchecked(beta: f64, area: f64, density: f64) -> f64 {
    (beta * area.sqrt() / (2.0 * density)).sqrt()
}

/// Tube-law pressure at position `x` of `vessel`.
pub fn pressure(area: f64, vessel: &Vessel, x: f64) -> Result<f64> {
    vessel.tube_law(x).pressure(area)
}

pub fn wave_speed(area: f64, vessel: &Vessel, blood: &BloodProperties) -> Result<f64> {
    if !(area > 0.0) {
        return Err(Error::Domain(format!("area must be positive, got {area}")));
    }
    Ok(wave_speed_unchecked(vessel.beta, area, blood.density))
}

/// Three-element (RCR) Windkessel termination.
///
/// `R1` is the characteristic impedance `ρ c0 / A0` of the terminal vessel end;
/// `R2 = Rt − R1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindkesselOutlet {
    pub vessel: VesselId,
    pub total_resistance: f64,
    pub compliance: f64,
    pub downstream_pressure: f64,
    proximal: f64,
}

impl WindkesselOutlet {
    /// Attach to the distal end of `vessel`, deriving `R1` from its geometry there.
    pub fn attach(
        vessel: &Vessel,
        blood: &BloodProperties,
        total_resistance: f64,
        compliance: f64,
        downstream_pressure: f64,
    ) -> Result<Self> {
        let law = vessel.tube_law(vessel.length);
        let proximal = blood.density * law.reference_wave_speed(blood) / law.area0;
        Self::with_proximal(vessel.id, proximal, total_resistance, compliance, downstream_pressure)
    }

    pub fn with_proximal(
        vessel: VesselId,
        proximal: f64,
        total_resistance: f64,
        compliance: f64,
        downstream_pressure: f64,
    ) -> Result<Self> {
        let out = WindkesselOutlet {
            vessel,
            total_resistance,
            compliance,
            downstream_pressure,
            proximal,
        };
        out.validate()?;
        Ok(out)
    }

    /// Same proximal resistance, new `(Rt, C)`.
    pub fn with_parameters(&self, total_resistance: f64, compliance: f64) -> Result<Self> {
        Self::with_proximal(self.vessel, self.proximal, total_resistance, compliance, self.downstream_pressure)
    }

    /// `R1`
    pub fn proximal_resistance(&self) -> f64 {
        self.proximal
    }

    /// `R2 = Rt − R1`
    pub fn distal_resistance(&self) -> f64 {
        self.total_resistance - self.proximal
    }

    fn validate(&self) -> Result<()> {
        let invalid = |field: &'static str, reason: String| Error::Invalid {
            vessel: self.vessel,
            field,
            reason,
        };
        if !(self.total_resistance > 0.0 && self.total_resistance.is_finite()) {
            return Err(invalid(
                "total_resistance",
                format!("must be positive, got {}", self.total_resistance),
            ));
        }
        if !(self.compliance >= 0.0 && self.compliance.is_finite()) {
            return Err(invalid("compliance", format!("must be non-negative, got {}", self.compliance)));
        }
        if !(self.proximal > 0.0 && self.proximal.is_finite()) {
            return Err(invalid("proximal_resistance", format!("must be positive, got {}", self.proximal)));
        }
        if self.distal_resistance() < 0.0 {
            return Err(invalid(
                "total_resistance",
                format!("R2 = Rt − R1 = {:e} − {:e} is negative", self.total_resistance, self.proximal),
            ));
        }
        if !self.downstream_pressure.is_finite() {
            return Err(invalid("downstream_pressure", "must be finite".into()));
        }
        Ok(())
    }
}

/// Vessels meeting at one point. Flow is oriented from parents (distal ends)
/// into children (proximal ends).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Junction {
    pub parents: Vec<VesselId>,
    pub children: Vec<VesselId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inlet {
    pub vessel: VesselId,
    pub waveform: InletWaveform,
}

/// What a vessel end is connected to. Indices refer to the network's lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attachment {
    Inlet(usize),
    Junction(usize),
    Outlet(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VesselEnds {
    pub start: Attachment,
    pub end: Attachment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology {
    vessels: Vec<Vessel>,
    junctions: Vec<Junction>,
    inlets: Vec<Inlet>,
    outlets: Vec<WindkesselOutlet>,
    blood: BloodProperties,
    ends: Vec<VesselEnds>,
    index: HashMap<VesselId, usize>,
}

impl NetworkTopology {
    /// Assemble and validate. Vessels are reordered by id; inlets and outlets
    /// likewise.
    pub fn new(
        mut vessels: Vec<Vessel>,
        junctions: Vec<Junction>,
        mut inlets: Vec<Inlet>,
        mut outlets: Vec<WindkesselOutlet>,
        blood: BloodProperties,
    ) -> Result<Self> {
        blood.validate()?;
        vessels.sort_by_key(|v| v.id);
        inlets.sort_by_key(|i| i.vessel);
        outlets.sort_by_key(|o| o.vessel);
        if vessels.is_empty() {
            return Err(Error::Topology("network has no vessels".into()));
        }
        let mut index = HashMap::new();
        for (k, v) in vessels.iter().enumerate() {
            if index.insert(v.id, k).is_some() {
                return Err(Error::Topology(format!("duplicate vessel id {}", v.id)));
            }
            v.validate()?;
        }
        for inlet in &inlets {
            inlet.waveform.validate().map_err(|e| Error::Invalid {
                vessel: inlet.vessel,
                field: "inlet",
                reason: e.to_string(),
            })?;
        }
        for o in &outlets {
            o.validate()?;
        }
        let ends = connect(&vessels, &index, &junctions, &inlets, &outlets)?;
        let net = NetworkTopology {
            vessels,
            junctions,
            inlets,
            outlets,
            blood,
            ends,
            index,
        };
        net.check_acyclic()?;
        Ok(net)
    }

    pub fn vessels(&self) -> &[Vessel] {
        &self.vessels
    }

    pub fn junctions(&self) -> &[Junction] {
        &self.junctions
    }

    pub fn inlets(&self) -> &[Inlet] {
        &self.inlets
    }

    pub fn outlets(&self) -> &[WindkesselOutlet] {
        &self.outlets
    }

    pub fn blood(&self) -> &BloodProperties {
        &self.blood
    }

    /// Position of vessel `id` in [`Self::vessels`].
    pub fn position(&self, id: VesselId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn vessel(&self, id: VesselId) -> Option<&Vessel> {
        self.position(id).map(|k| &self.vessels[k])
    }

    /// Attachments of the vessel at position `k`.
    pub fn ends(&self, k: usize) -> VesselEnds {
        self.ends[k]
    }

    /// Common period of all inlets.
    pub fn period(&self) -> Result<f64> {
        let first = self
            .inlets
            .first()
            .ok_or_else(|| Error::Topology("network has no inlet".into()))?
            .waveform
            .period;
        if self.inlets.iter().any(|i| i.waveform.period != first) {
            return Err(Error::Topology("inlets have different periods".into()));
        }
        Ok(first)
    }

    /// Replace per-vessel data, keeping connectivity. Used to realize
    /// randomized parameter samples.
    pub fn rebuild(&self, vessels: Vec<Vessel>, inlets: Vec<Inlet>, outlets: Vec<WindkesselOutlet>) -> Result<Self> {
        Self::new(vessels, self.junctions.clone(), inlets, outlets, self.blood)
    }

    /// Same network with every vessel discretized by `nodes` points.
    pub fn with_nodes(&self, nodes: usize) -> Result<Self> {
        let vessels = self.vessels.iter().map(|v| Vessel { nodes, ..v.clone() }).collect();
        self.rebuild(vessels, self.inlets.clone(), self.outlets.clone())
    }

    /// Returns true when the undirected vessel graph contains a loop.
    pub fn has_loops(&self) -> bool {
        // Junctions are graph nodes; each vessel between two junctions is an edge.
        let mut parent: Vec<usize> = (0..self.junctions.len()).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for e in &self.ends {
            if let (Attachment::Junction(a), Attachment::Junction(b)) = (e.start, e.end) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra == rb {
                    return true;
                }
                parent[ra] = rb;
            }
        }
        false
    }

    fn check_acyclic(&self) -> Result<()> {
        // Directed cycle check over vessels: k -> children of the junction at its end.
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Active,
            Done,
        }
        let mut marks = vec![Mark::New; self.vessels.len()];
        fn visit(net: &NetworkTopology, k: usize, marks: &mut [Mark]) -> Result<()> {
            match marks[k] {
                Mark::Done => return Ok(()),
                Mark::Active => return Err(Error::Topology(format!("directed cycle through vessel {}", net.vessels[k].id))),
                Mark::New => {}
            }
            marks[k] = Mark::Active;
            if let Attachment::Junction(j) = net.ends[k].end {
                for child in &net.junctions[j].children {
                    visit(net, net.index[child], marks)?;
                }
            }
            marks[k] = Mark::Done;
            Ok(())
        }
        for k in 0..self.vessels.len() {
            visit(self, k, &mut marks)?;
        }
        if self.has_loops() {
            log::warn!("network contains loops; loop support is experimental");
        }
        Ok(())
    }
}

fn connect(
    vessels: &[Vessel],
    index: &HashMap<VesselId, usize>,
    junctions: &[Junction],
    inlets: &[Inlet],
    outlets: &[WindkesselOutlet],
) -> Result<Vec<VesselEnds>> {
    let mut starts: Vec<Vec<Attachment>> = vec![Vec::new(); vessels.len()];
    let mut ends: Vec<Vec<Attachment>> = vec![Vec::new(); vessels.len()];
    let lookup = |id: &VesselId, what: &str| {
        index
            .get(id)
            .copied()
            .ok_or_else(|| Error::Topology(format!("{what} references unknown vessel {id}")))
    };
    for (j, junction) in junctions.iter().enumerate() {
        if junction.parents.is_empty() || junction.children.is_empty() {
            return Err(Error::Topology(format!("junction {j} needs at least one parent and one child")));
        }
        if junction.parents.len() + junction.children.len() < 2 {
            return Err(Error::Topology(format!("junction {j} joins fewer than two vessels")));
        }
        for id in &junction.parents {
            ends[lookup(id, "junction")?].push(Attachment::Junction(j));
        }
        for id in &junction.children {
            starts[lookup(id, "junction")?].push(Attachment::Junction(j));
        }
    }
    for (i, inlet) in inlets.iter().enumerate() {
        starts[lookup(&inlet.vessel, "inlet")?].push(Attachment::Inlet(i));
    }
    for (o, outlet) in outlets.iter().enumerate() {
        ends[lookup(&outlet.vessel, "outlet")?].push(Attachment::Outlet(o));
    }
    vessels
        .iter()
        .zip(starts.into_iter().zip(ends))
        .map(|(v, (s, e))| match (s.as_slice(), e.as_slice()) {
            ([start], [end]) => Ok(VesselEnds { start: *start, end: *end }),
            _ => Err(Error::Topology(format!(
                "vessel {} must have exactly one inlet-or-junction at its start and one \
                 junction-or-outlet at its end (found {} and {})",
                v.id,
                s.len(),
                e.len()
            ))),
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Config document

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct NetworkDoc {
    pub blood: BloodProperties,
    pub vessel: BTreeMap<String, VesselDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub junction: Vec<JunctionDoc>,
    #[serde(default)]
    pub inlet: BTreeMap<String, InletWaveform>,
    #[serde(default)]
    pub outlet: BTreeMap<String, OutletDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct VesselDoc {
    length: f64,
    nodes: usize,
    area: AreaProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    wall: Option<WallProperties>,
    #[serde(default)]
    external_pressure: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct JunctionDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parent: Option<VesselId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    parents: Vec<VesselId>,
    children: Vec<VesselId>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct OutletDoc {
    total_resistance: f64,
    compliance: f64,
    #[serde(default)]
    downstream_pressure: f64,
    /// Overrides the derived `ρ c0 / A0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    proximal_resistance: Option<f64>,
}

fn parse_id(key: &str, section: &str) -> Result<VesselId> {
    key.parse()
        .map_err(|_| Error::Parse(format!("[{section}.{key}]: section key must be a vessel id")))
}

impl NetworkDoc {
    pub(crate) fn into_topology(self) -> Result<NetworkTopology> {
        let blood = self.blood;
        let mut vessels: Vec<Vessel> = Vec::with_capacity(self.vessel.len());
        for (key, doc) in self.vessel {
            let id = parse_id(&key, "vessel")?;
            if vessels.iter().any(|v| v.id == id) {
                return Err(Error::Topology(format!("duplicate vessel id {id}")));
            }
            let mut vessel = Vessel {
                id,
                length: doc.length,
                nodes: doc.nodes,
                area: doc.area,
                beta: 0.0,
                external_pressure: doc.external_pressure,
            };
            vessel.beta = match (doc.beta, doc.wall) {
                (Some(beta), None) => beta,
                (None, Some(wall)) => {
                    // β from the wall at the mean equilibrium area over the grid.
                    let grid = vessel.grid();
                    let mean = grid.iter().map(|x| vessel.area0(*x)).sum::<f64>() / grid.len() as f64;
                    compute_beta(&wall, mean).map_err(|e| Error::Invalid {
                        vessel: id,
                        field: "wall",
                        reason: e.to_string(),
                    })?
                }
                _ => {
                    return Err(Error::Invalid {
                        vessel: id,
                        field: "beta",
                        reason: "give exactly one of `beta` or `wall`".into(),
                    })
                }
            };
            vessel.validate()?;
            vessels.push(vessel);
        }
        let junctions = self
            .junction
            .into_iter()
            .map(|j| {
                let mut parents = j.parents;
                parents.extend(j.parent);
                Junction {
                    parents,
                    children: j.children,
                }
            })
            .collect();
        let inlets = self
            .inlet
            .into_iter()
            .map(|(key, waveform)| {
                Ok(Inlet {
                    vessel: parse_id(&key, "inlet")?,
                    waveform,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut outlets = Vec::new();
        for (key, doc) in self.outlet {
            let id = parse_id(&key, "outlet")?;
            let outlet = match doc.proximal_resistance {
                Some(r1) => WindkesselOutlet::with_proximal(id, r1, doc.total_resistance, doc.compliance, doc.downstream_pressure)?,
                None => {
                    let vessel = vessels
                        .iter()
                        .find(|v| v.id == id)
                        .ok_or_else(|| Error::Topology(format!("outlet references unknown vessel {id}")))?;
                    WindkesselOutlet::attach(vessel, &blood, doc.total_resistance, doc.compliance, doc.downstream_pressure)?
                }
            };
            outlets.push(outlet);
        }
        NetworkTopology::new(vessels, junctions, inlets, outlets, blood)
    }

    fn from_topology(net: &NetworkTopology) -> Self {
        NetworkDoc {
            blood: net.blood,
            vessel: net
                .vessels
                .iter()
                .map(|v| {
                    (
                        v.id.to_string(),
                        VesselDoc {
                            length: v.length,
                            nodes: v.nodes,
                            area: v.area.clone(),
                            beta: Some(v.beta),
                            wall: None,
                            external_pressure: v.external_pressure,
                        },
                    )
                })
                .collect(),
            junction: net
                .junctions
                .iter()
                .map(|j| JunctionDoc {
                    parent: None,
                    parents: j.parents.clone(),
                    children: j.children.clone(),
                })
                .collect(),
            inlet: net.inlets.iter().map(|i| (i.vessel.to_string(), i.waveform.clone())).collect(),
            outlet: net
                .outlets
                .iter()
                .map(|o| {
                    (
                        o.vessel.to_string(),
                        OutletDoc {
                            total_resistance: o.total_resistance,
                            compliance: o.compliance,
                            downstream_pressure: o.downstream_pressure,
                            proximal_resistance: Some(o.proximal),
                        },
                    )
                })
                .collect(),
        }
    }
}

/// Parse and validate a network config document. Unrelated top-level tables
/// (scenario settings, randomization) are ignored.
pub fn load_network(config_text: &str) -> Result<NetworkTopology> {
    let doc: NetworkDoc = toml::from_str(config_text).map_err(|e| Error::Parse(e.to_string()))?;
    doc.into_topology()
}

/// Render a network as a config document accepted by [`load_network`].
pub fn serialize_network(net: &NetworkTopology) -> String {
    toml::to_string(&NetworkDoc::from_topology(net)).expect("network documents are always serializable")
}
