//! Site and bond layout of the system–chain Hamiltonian on a line.

use crate::error::{Error, Result};
use crate::linalg::{self, annihilation, identity, kron, number_op, scale, zeros, CMat, C64};
use crate::spectral::ChainParams;

#[derive(Debug, Clone)]
pub enum SiteKind {
    System,
    Oscillator { frequency: f64 },
}

#[derive(Debug, Clone)]
pub enum BondKind {
    /// `coupling · A ⊗ (b + b†)`; `system_left` tells which side holds `A`.
    SystemChain {
        coupling: f64,
        op: CMat,
        system_left: bool,
    },
    /// `eta · (b† ⊗ b + b ⊗ b†)`.
    Hopping { eta: f64 },
}

#[derive(Debug, Clone)]
pub struct Lattice {
    pub sites: Vec<SiteKind>,
    pub bonds: Vec<BondKind>,
    pub h_sys: Option<CMat>,
    pub system_site: Option<usize>,
    pub d: usize,
}

impl Lattice {
    /// System coupled to zero, one or two chains. One chain sits to the right
    /// of the system; with two, the first is mirrored onto the left.
    pub fn new(h_sys: &CMat, couplings: &[(CMat, ChainParams)], d: usize) -> Result<Self> {
        let d_sys = h_sys.nrows();
        if h_sys.ncols() != d_sys || d_sys == 0 {
            return Err(Error::Validation(
                "system Hamiltonian must be square".into(),
            ));
        }
        for (k, (a, _)) in couplings.iter().enumerate() {
            if a.nrows() != d_sys || a.ncols() != d_sys {
                return Err(Error::Validation(format!(
                    "coupling operator {k} is {}x{}, expected {d_sys}x{d_sys}",
                    a.nrows(),
                    a.ncols()
                )));
            }
        }
        let mut sites = Vec::new();
        let mut bonds = Vec::new();
        let system_site;
        match couplings {
            [] => {
                sites.push(SiteKind::System);
                system_site = 0;
            }
            [(a, right)] => {
                sites.push(SiteKind::System);
                system_site = 0;
                push_right(&mut sites, &mut bonds, a, right);
            }
            [(a_left, left), (a_right, right)] => {
                for n in (0..left.len()).rev() {
                    sites.push(SiteKind::Oscillator {
                        frequency: left.frequencies[n],
                    });
                    if n > 0 {
                        bonds.push(BondKind::Hopping {
                            eta: left.hopping[n - 1],
                        });
                    }
                }
                if !left.is_empty() {
                    bonds.push(BondKind::SystemChain {
                        coupling: left.coupling,
                        op: a_left.clone(),
                        system_left: false,
                    });
                }
                system_site = sites.len();
                sites.push(SiteKind::System);
                push_right(&mut sites, &mut bonds, a_right, right);
            }
            _ => {
                return Err(Error::Validation(
                    "at most two chains can be attached".into(),
                ))
            }
        }
        Ok(Self {
            sites,
            bonds,
            h_sys: Some(h_sys.clone()),
            system_site: Some(system_site),
            d,
        })
    }

    /// The chain alone, as used for thermal preparation and recurrence probes.
    pub fn bare_chain(chain: &ChainParams, d: usize) -> Self {
        let mut sites = Vec::new();
        let mut bonds = Vec::new();
        for (n, &w) in chain.frequencies.iter().enumerate() {
            if n > 0 {
                bonds.push(BondKind::Hopping {
                    eta: chain.hopping[n - 1],
                });
            }
            sites.push(SiteKind::Oscillator { frequency: w });
        }
        Self {
            sites,
            bonds,
            h_sys: None,
            system_site: None,
            d,
        }
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn phys_dims(&self) -> Vec<usize> {
        self.sites
            .iter()
            .map(|s| match s {
                SiteKind::System => self.h_sys.as_ref().map_or(1, |h| h.nrows()),
                SiteKind::Oscillator { .. } => self.d,
            })
            .collect()
    }

    fn bonds_touching(&self, i: usize) -> usize {
        usize::from(i > 0) + usize::from(i + 1 < self.len())
    }

    /// Local term of site `i` on a space of dimension `dim`. With `bare`
    /// the system contributes nothing.
    pub fn site_hamiltonian(&self, i: usize, dim: usize, bare: bool) -> CMat {
        match &self.sites[i] {
            SiteKind::System => match (&self.h_sys, bare) {
                (Some(h), false) if h.nrows() == dim => h.clone(),
                _ => zeros(dim, dim),
            },
            SiteKind::Oscillator { frequency } => {
                scale(number_op(dim).as_ref(), C64::new(*frequency, 0.0))
            }
        }
    }

    /// Two-site term of bond `b` (between sites `b` and `b+1`) on spaces of
    /// dimensions `dims`, including the share of the on-site terms assigned
    /// to this bond.
    pub fn bond_hamiltonian(&self, b: usize, dims: (usize, usize), bare: bool) -> CMat {
        let (dl, dr) = dims;
        let wl = 1.0 / self.bonds_touching(b) as f64;
        let wr = 1.0 / self.bonds_touching(b + 1) as f64;
        let hl = self.site_hamiltonian(b, dl, bare);
        let hr = self.site_hamiltonian(b + 1, dr, bare);
        let mut h = &scale(
            kron(hl.as_ref(), identity(dr).as_ref()).as_ref(),
            C64::new(wl, 0.0),
        ) + &scale(
            kron(identity(dl).as_ref(), hr.as_ref()).as_ref(),
            C64::new(wr, 0.0),
        );
        match &self.bonds[b] {
            BondKind::SystemChain {
                coupling,
                op,
                system_left,
            } => {
                if !bare {
                    let (ds, dc) = if *system_left { (dl, dr) } else { (dr, dl) };
                    if op.nrows() == ds {
                        let bo = annihilation(dc);
                        let x = &bo + &linalg::adjoint(bo.as_ref());
                        let term = if *system_left {
                            kron(op.as_ref(), x.as_ref())
                        } else {
                            kron(x.as_ref(), op.as_ref())
                        };
                        h = &h + &scale(term.as_ref(), C64::new(*coupling, 0.0));
                    }
                }
            }
            BondKind::Hopping { eta } => {
                let bl = annihilation(dl);
                let br = annihilation(dr);
                let hop = &kron(linalg::adjoint(bl.as_ref()).as_ref(), br.as_ref())
                    + &kron(bl.as_ref(), linalg::adjoint(br.as_ref()).as_ref());
                h = &h + &scale(hop.as_ref(), C64::new(*eta, 0.0));
            }
        }
        h
    }
}

fn push_right(sites: &mut Vec<SiteKind>, bonds: &mut Vec<BondKind>, a: &CMat, chain: &ChainParams) {
    for (n, &w) in chain.frequencies.iter().enumerate() {
        if n == 0 {
            bonds.push(BondKind::SystemChain {
                coupling: chain.coupling,
                op: a.clone(),
                system_left: true,
            });
        } else {
            bonds.push(BondKind::Hopping {
                eta: chain.hopping[n - 1],
            });
        }
        sites.push(SiteKind::Oscillator { frequency: w });
    }
}
