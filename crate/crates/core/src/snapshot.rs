//! Extension of active-mesh solutions to the background mesh, transport
//! composition and on-disk snapshot sets.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::darcy::{solve_harmonic_extension, Penalties};
use crate::error::{Error, Result};
use crate::geometry::{ActiveMesh, LevelSetDomain, TransportMap};
use crate::mesh::BackgroundMesh;

pub const FORMAT_NAME: &str = "cutrom-fields";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    Scalar,
    Velocity,
    Pressure,
    Supremizer,
}

impl FieldKind {
    pub fn components(self) -> usize {
        match self {
            FieldKind::Velocity | FieldKind::Supremizer => 2,
            FieldKind::Scalar | FieldKind::Pressure => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FieldKind::Scalar => "scalar",
            FieldKind::Velocity => "velocity",
            FieldKind::Pressure => "pressure",
            FieldKind::Supremizer => "supremizer",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtensionMode {
    Zero,
    #[default]
    Natural,
    Harmonic,
}

impl std::str::FromStr for ExtensionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Self::Zero),
            "natural" => Ok(Self::Natural),
            "harmonic" => Ok(Self::Harmonic),
            _ => Err(Error::InvalidArgument(format!("unknown extension mode '{s}'"))),
        }
    }
}

impl ExtensionMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Zero => "zero",
            Self::Natural => "natural",
            Self::Harmonic => "harmonic",
        }
    }
}

/// Extended (and optionally transported) fields on the background mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotSet {
    pub kind: FieldKind,
    pub fields: Vec<Vec<f64>>,
    pub parameters: Vec<Vec<f64>>,
    pub extension: ExtensionMode,
    pub transported: bool,
    pub reference: Option<Vec<f64>>,
}

impl SnapshotSet {
    pub fn new(kind: FieldKind, extension: ExtensionMode, reference: Option<Vec<f64>>) -> Self {
        Self {
            kind,
            fields: Vec::new(),
            parameters: Vec::new(),
            extension,
            transported: reference.is_some(),
            reference,
        }
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn push(&mut self, field: Vec<f64>, parameter: Vec<f64>) -> Result<()> {
        if let Some(first) = self.fields.first() {
            if first.len() != field.len() {
                return Err(Error::InvalidArgument(format!(
                    "snapshot length {} differs from {}",
                    field.len(),
                    first.len()
                )));
            }
        }
        self.fields.push(field);
        self.parameters.push(parameter);
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let manifest = Manifest {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            role: Role::Snapshots,
            kind: self.kind,
            count: self.len(),
            dofs: self.fields.first().map_or(0, Vec::len),
            components: self.kind.components(),
            extension_mode: self.extension,
            transported: self.transported,
            reference_parameter: self.reference.clone(),
            parameters: self.parameters.clone(),
            eigenvalues: None,
            files: Vec::new(),
        };
        write_fields(dir, manifest, &self.fields)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (manifest, fields) = read_fields(dir, Role::Snapshots)?;
        Ok(Self {
            kind: manifest.kind,
            fields,
            parameters: manifest.parameters,
            extension: manifest.extension_mode,
            transported: manifest.transported,
            reference: manifest.reference_parameter,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Snapshots,
    Basis,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
}

/// Contents of `manifest.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub role: Role,
    pub kind: FieldKind,
    pub count: usize,
    pub dofs: usize,
    pub components: usize,
    pub extension_mode: ExtensionMode,
    pub transported: bool,
    pub reference_parameter: Option<Vec<f64>>,
    pub parameters: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigenvalues: Option<Vec<f64>>,
    pub files: Vec<FileEntry>,
}

fn snap_name(i: usize) -> String {
    format!("snap_{i:04}.f64")
}

fn to_bytes(field: &[f64]) -> Vec<u8> {
    field.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub(crate) fn write_fields(dir: &Path, mut manifest: Manifest, fields: &[Vec<f64>]) -> Result<()> {
    if fields.is_empty() {
        return Err(Error::InvalidArgument("refusing to save an empty set".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    manifest.files.clear();
    for (i, field) in fields.iter().enumerate() {
        let name = snap_name(i);
        let bytes = to_bytes(field);
        let path = dir.join(&name);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        manifest.files.push(FileEntry {
            name,
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
    }
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub(crate) fn read_fields(dir: &Path, role: Role) -> Result<(Manifest, Vec<Vec<f64>>)> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::format(&path, format!("unreadable manifest: {e}")))?;
    if manifest.format != FORMAT_NAME || manifest.version != FORMAT_VERSION {
        return Err(Error::format(
            &path,
            format!(
                "unsupported format {} version {}, expected {FORMAT_NAME} version {FORMAT_VERSION}",
                manifest.format, manifest.version
            ),
        ));
    }
    if manifest.role != role {
        return Err(Error::format(&path, format!("expected role {role:?}, found {:?}", manifest.role)));
    }
    if manifest.files.len() != manifest.count || manifest.count == 0 {
        return Err(Error::format(&path, "file list does not match count"));
    }
    let mut fields = Vec::with_capacity(manifest.count);
    for entry in &manifest.files {
        let fpath = dir.join(&entry.name);
        let bytes = fs::read(&fpath).map_err(|e| Error::io(&fpath, e))?;
        if hex::encode(Sha256::digest(&bytes)) != entry.sha256 {
            return Err(Error::format(&fpath, "checksum mismatch"));
        }
        if bytes.len() != 8 * manifest.dofs {
            return Err(Error::format(&fpath, format!("expected {} values", manifest.dofs)));
        }
        fields.push(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect(),
        );
    }
    Ok((manifest, fields))
}

/// Everything the extension operators need besides the field itself.
#[derive(Clone, Copy, Debug)]
pub struct ExtensionContext<'a> {
    pub mesh: &'a BackgroundMesh,
    pub domain: &'a LevelSetDomain,
    /// Penalties of the harmonic extension solve.
    pub penalties: Penalties,
}

/// Extend a field given on the active DOFs (component blocks) to the
/// background mesh.
pub fn extend(
    ctx: ExtensionContext<'_>,
    active: &ActiveMesh,
    values: &[f64],
    components: usize,
    mode: ExtensionMode,
) -> Result<Vec<f64>> {
    let mesh = ctx.mesh;
    let n = active.num_dofs();
    if values.len() != n * components {
        return Err(Error::InvalidArgument(format!(
            "field has {} values, expected {} active DOFs x {components}",
            values.len(),
            n
        )));
    }
    let nv = mesh.num_vertices();
    let mu = active.parameter();
    let natural = active.to_background(values, components, nv);
    let inside: Vec<bool> = mesh.vertices().iter().map(|&p| ctx.domain.phi(p, mu) <= 0.0).collect();
    match mode {
        ExtensionMode::Natural => Ok(natural),
        ExtensionMode::Zero => {
            let mut out = natural;
            for c in 0..components {
                for v in 0..nv {
                    if !inside[v] {
                        out[c * nv + v] = 0.0;
                    }
                }
            }
            Ok(out)
        }
        ExtensionMode::Harmonic => {
            let mut out = natural.clone();
            for c in 0..components {
                let trace = &natural[c * nv..(c + 1) * nv];
                let (ext, comp) = solve_harmonic_extension(
                    trace,
                    mesh,
                    ctx.domain,
                    mu,
                    active.subdivision(),
                    ctx.penalties,
                )?;
                for v in 0..nv {
                    if !inside[v] {
                        out[c * nv + v] = comp.dof(v).map_or(0.0, |d| ext.values[d]);
                    }
                }
            }
            Ok(out)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Precomputed point locations of `tau(mu)(x)` or `tau^-1(mu)(x)` for every
/// background vertex `x`.
#[derive(Clone, Debug)]
pub struct TransportStencil {
    entries: Vec<Option<([usize; 3], [f64; 3])>>,
}

impl TransportStencil {
    pub fn new(mesh: &BackgroundMesh, map: &TransportMap, mu: &[f64], direction: Direction) -> Self {
        let entries = mesh
            .vertices()
            .par_iter()
            .map(|&x| {
                let y = match direction {
                    Direction::Forward => map.forward(x, mu),
                    Direction::Inverse => map.inverse(x, mu),
                };
                mesh.locate_point(y).map(|(c, lam)| (mesh.cells()[c], lam))
            })
            .collect();
        Self { entries }
    }

    /// Compose a background field (component blocks) with the map; vertices
    /// whose image leaves the box get zero.
    pub fn apply(&self, field: &[f64], components: usize) -> Vec<f64> {
        let nv = self.entries.len();
        assert_eq!(field.len(), nv * components);
        let mut out = vec![0.0; nv * components];
        for c in 0..components {
            let src = &field[c * nv..(c + 1) * nv];
            for (v, e) in self.entries.iter().enumerate() {
                if let Some((verts, lam)) = e {
                    out[c * nv + v] = verts.iter().zip(lam).map(|(&k, l)| src[k] * l).sum();
                }
            }
        }
        out
    }

    /// Number of vertices whose image falls outside the box.
    pub fn outside_count(&self) -> usize {
        self.entries.iter().filter(|e| e.is_none()).count()
    }
}

pub fn transport_compose(
    mesh: &BackgroundMesh,
    field: &[f64],
    components: usize,
    map: &TransportMap,
    mu: &[f64],
    direction: Direction,
) -> Vec<f64> {
    TransportStencil::new(mesh, map, mu, direction).apply(field, components)
}
