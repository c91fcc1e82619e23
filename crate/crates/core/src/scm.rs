//! Additive Gaussian noise SCMs: Z_i = f_i(Z_pa(i)) + E_i, E_i ~ N(0, σ_i²).

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Dag;
use crate::mechanism::{
    is_directionally_nonlinear, Affine, Constant, MechanismRef, MechanismRegistry, SquaredNorm,
};
use crate::rng;

#[derive(Debug, Clone)]
pub struct Scm {
    dag: Dag,
    mechanisms: Vec<MechanismRef>,
    noise_vars: Vec<f64>,
}

/// JSON form: `{"n":…, "edges":[[u,v],…], "mechanisms":[…], "noise_vars":[…]}`.
/// Mechanisms are registry names; parent vectors are ordered by node index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmDoc {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
    pub mechanisms: Vec<String>,
    pub noise_vars: Vec<f64>,
}

impl Scm {
    /// Validates arities, positive variances, zero root mechanisms and
    /// directional nonlinearity of every non-root mechanism.
    pub fn new(dag: Dag, mechanisms: Vec<MechanismRef>, noise_vars: Vec<f64>) -> Result<Self> {
        let scm = Self::with_constant_roots(dag, mechanisms, noise_vars)?;
        let mut probe = rng::stream(0x5eed, 0);
        for i in 0..scm.n() {
            let m = &scm.mechanisms[i];
            if scm.dag.parents(i).is_empty() {
                if m.value(&[]) != 0.0 {
                    return Err(Error::Structure(format!("root {i} must use the zero mechanism")));
                }
            } else if !is_directionally_nonlinear(m.as_ref(), &mut probe, 20, 100) {
                return Err(Error::Structure(format!(
                    "mechanism `{}` of node {i} is linear along some direction",
                    m.name()
                )));
            }
        }
        Ok(scm)
    }

    /// Like [`Scm::new`] but roots may carry any constant and the nonlinearity
    /// probe is skipped. Used for reparameterized and restricted models derived
    /// from an already validated SCM.
    fn with_constant_roots(
        dag: Dag,
        mechanisms: Vec<MechanismRef>,
        noise_vars: Vec<f64>,
    ) -> Result<Self> {
        let n = dag.n();
        if mechanisms.len() != n || noise_vars.len() != n {
            return Err(Error::Dimension(format!(
                "{n} nodes but {} mechanisms and {} noise variances",
                mechanisms.len(),
                noise_vars.len()
            )));
        }
        for i in 0..n {
            if mechanisms[i].arity() != dag.parents(i).len() {
                return Err(Error::Structure(format!(
                    "node {i}: mechanism arity {} but {} parents",
                    mechanisms[i].arity(),
                    dag.parents(i).len()
                )));
            }
            if !(noise_vars[i] > 0.0) || !noise_vars[i].is_finite() {
                return Err(Error::Structure(format!("node {i}: noise variance must be positive")));
            }
        }
        Ok(Self { dag, mechanisms, noise_vars })
    }

    /// Squared-norm mechanism on every non-root node.
    pub fn squared_norm(dag: Dag, noise_vars: Vec<f64>) -> Result<Self> {
        let mechanisms = (0..dag.n())
            .map(|i| match dag.parents(i).len() {
                0 => Arc::new(Constant(0.0)) as MechanismRef,
                p => Arc::new(SquaredNorm { arity: p }) as MechanismRef,
            })
            .collect();
        Self::new(dag, mechanisms, noise_vars)
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn n(&self) -> usize {
        self.dag.n()
    }

    pub fn mechanism(&self, i: usize) -> &MechanismRef {
        &self.mechanisms[i]
    }

    pub fn noise_vars(&self) -> &[f64] {
        &self.noise_vars
    }

    pub fn parent_values(&self, i: usize, z: &[f64]) -> Vec<f64> {
        self.dag.parents(i).iter().map(|&p| z[p]).collect()
    }

    /// f_i evaluated at the parents of i in `z`.
    pub fn mean_of(&self, i: usize, z: &[f64]) -> f64 {
        self.mechanisms[i].value(&self.parent_values(i, z))
    }

    pub fn from_doc(doc: &ScmDoc, registry: &MechanismRegistry) -> Result<Self> {
        let edges: Vec<(usize, usize)> = doc.edges.iter().map(|e| (e[0], e[1])).collect();
        let dag = Dag::from_edges(doc.n, &edges)?;
        if doc.mechanisms.len() != doc.n {
            return Err(Error::Dimension(format!(
                "{} nodes but {} mechanisms",
                doc.n,
                doc.mechanisms.len()
            )));
        }
        let mechanisms = doc
            .mechanisms
            .iter()
            .enumerate()
            .map(|(i, name)| registry.build(name, dag.parents(i).len()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(dag, mechanisms, doc.noise_vars.clone())
    }

    pub fn to_doc(&self) -> ScmDoc {
        ScmDoc {
            n: self.n(),
            edges: self.dag.edges().into_iter().map(|(u, v)| [u, v]).collect(),
            mechanisms: self.mechanisms.iter().map(|m| m.name().to_string()).collect(),
            noise_vars: self.noise_vars.clone(),
        }
    }

    pub fn from_json_str(s: &str, registry: &MechanismRegistry) -> Result<Self> {
        Self::from_doc(&serde_json::from_str(s)?, registry)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc())?)
    }

    /// Sub-SCM on an ancestrally closed node set, relabelled in increasing
    /// index order. Its joint density is the marginal of those nodes.
    pub fn restrict(&self, nodes: &[usize]) -> Result<Scm> {
        let mut nodes = nodes.to_vec();
        nodes.sort_unstable();
        nodes.dedup();
        if !self.dag.is_ancestrally_closed(&nodes) {
            return Err(Error::Structure("restriction set is not ancestrally closed".into()));
        }
        let dag = self.dag.induced(&nodes)?;
        let mechanisms = nodes.iter().map(|&i| self.mechanisms[i].clone()).collect();
        let vars = nodes.iter().map(|&i| self.noise_vars[i]).collect();
        Self::with_constant_roots(dag, mechanisms, vars)
    }

    /// The SCM of Z' = a ⊙ Z + b (a > 0): mechanism i becomes
    /// a_i f_i((z'_pa − b_pa) ⊘ a_pa) + b_i and the noise variance a_i² σ_i².
    pub fn affine_reparameterize(&self, a: &[f64], b: &[f64]) -> Result<Scm> {
        let n = self.n();
        if a.len() != n || b.len() != n {
            return Err(Error::Dimension("affine coefficients length".into()));
        }
        if a.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Degenerate("affine scales must be positive".into()));
        }
        let mechanisms = (0..n)
            .map(|i| {
                let ps = self.dag.parents(i);
                if ps.is_empty() {
                    let c = a[i] * self.mechanisms[i].value(&[]) + b[i];
                    Arc::new(Constant(c)) as MechanismRef
                } else {
                    Arc::new(Affine {
                        inner: self.mechanisms[i].clone(),
                        a_out: a[i],
                        b_out: b[i],
                        a_in: ps.iter().map(|&p| a[p]).collect(),
                        b_in: ps.iter().map(|&p| b[p]).collect(),
                    }) as MechanismRef
                }
            })
            .collect();
        let vars = (0..n).map(|i| a[i] * a[i] * self.noise_vars[i]).collect();
        Self::with_constant_roots(self.dag.clone(), mechanisms, vars)
    }
}
