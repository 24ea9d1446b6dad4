use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bank::EmbeddingBank;
use super::fc::{collect_kan, collect_kan_mut, Fc, Head, Named, NamedMut};
use super::trace::{ForwardTrace, MasteryVector, Mode, TraceVars};
use super::variant::Variant;
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::kan::{KanNetwork, Renorm, SplineGrid};

/// Architecture and size of a [`DiagnosisModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Students.
    pub n: usize,
    /// Exercises.
    pub m: usize,
    /// Concepts.
    pub k: usize,
    /// Embedding width; must equal `k`.
    pub d: usize,
    /// Sub-embedding modules of the two-level variants.
    pub k_heads: usize,
    pub grid: SplineGrid,
    pub renorm: Renorm,
    /// Hidden widths of the NCD-style FC output head.
    pub ncd_hidden: Vec<usize>,
    /// Hidden widths of KAN heads (empty means a single KAN layer).
    pub kan_hidden: Vec<usize>,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(variant: Variant, n: usize, m: usize, k: usize) -> Self {
        ModelConfig {
            variant,
            n,
            m,
            k,
            d: k,
            k_heads: 2,
            grid: SplineGrid::default(),
            renorm: Renorm::None,
            ncd_hidden: vec![256, 128],
            kan_hidden: Vec::new(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.k == 0 {
            return Err(Error::Config(format!(
                "model needs N, M, K ≥ 1 (got {}, {}, {})",
                self.n, self.m, self.k
            )));
        }
        if self.d != self.k {
            return Err(Error::Config(format!(
                "embedding width D = {} must equal the concept count K = {}",
                self.d, self.k
            )));
        }
        if self.k_heads == 0 {
            return Err(Error::Config("k_heads must be at least 1".into()));
        }
        if self.ncd_hidden.contains(&0) || self.kan_hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }

    fn kan_widths(&self, n_in: usize, n_out: usize) -> Vec<usize> {
        let mut w = vec![n_in];
        w.extend(&self.kan_hidden);
        w.push(n_out);
        w
    }

    fn ncd_widths(&self, n_in: usize) -> Vec<usize> {
        let mut w = vec![n_in];
        w.extend(&self.ncd_hidden);
        w.push(1);
        w
    }
}

/// Embedding sources of the two-level variants.
#[derive(Clone, Debug)]
pub enum SubEmbeddings {
    /// One embedding bank per head.
    Banks(Vec<EmbeddingBank>),
    /// Per head, KANs over the one-hot student `N→D`, one-hot exercise
    /// `M→D` and Q row `K→D`.
    Kans(Vec<[KanNetwork; 3]>),
}

/// Variant-specific sub-networks.
#[derive(Clone, Debug)]
pub enum Heads {
    Irt {
        theta: Fc,
        beta: Fc,
        disc: Fc,
    },
    Mirt {
        alpha: Fc,
        beta: Fc,
    },
    Dina {
        theta: Fc,
        guess: Fc,
        slip: Fc,
    },
    Mf,
    Ncd {
        disc: Head,
        out: Head,
    },
    Kancd {
        stu: Head,
        diff: Head,
        disc: Head,
        out: Head,
    },
    Kscd {
        stu: Head,
        exer: Head,
    },
    Rcd {
        stu: Head,
        exer: Head,
        out: Head,
    },
    TwoLevel {
        embed: SubEmbeddings,
        lower: Vec<KanNetwork>,
        upper: KanNetwork,
    },
}

/// A diagnosis model: variant, parameters and the Q-matrix it was built for.
#[derive(Clone, Debug)]
pub struct DiagnosisModel {
    config: ModelConfig,
    /// `[M, K]`, constant.
    q: Tensor,
    bank: Option<EmbeddingBank>,
    heads: Heads,
    trained_epochs: usize,
}

fn q_tensor(q: &[Vec<u8>], m: usize, k: usize) -> Result<Tensor> {
    if q.len() != m || q.iter().any(|r| r.len() != k) {
        return Err(Error::shape(
            "q_matrix",
            &[q.len(), q.first().map_or(0, Vec::len)],
            &[m, k],
        ));
    }
    if let Some(j) = q.iter().position(|r| r.iter().all(|v| *v == 0)) {
        return Err(Error::Integrity(format!("exercise {j} has an empty Q row")));
    }
    Tensor::new(
        vec![m, k],
        q.iter().flatten().map(|v| f64::from(*v)).collect(),
    )
}

fn logistic_noise(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| {
            let u: f64 = rng.gen_range(1e-12..1.0 - 1e-12);
            u.ln() - (1.0 - u).ln()
        })
        .collect()
}

impl DiagnosisModel {
    /// Randomly initialized model; `q` is the `M × K` Q-matrix.
    pub fn new(config: ModelConfig, q: &[Vec<u8>]) -> Result<Self> {
        config.validate()?;
        let q = q_tensor(q, config.m, config.k)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (n, m, k, d) = (config.n, config.m, config.k, config.d);
        let grid = &config.grid;
        let renorm = config.renorm;
        let kan = |widths: &[usize], rng: &mut ChaCha8Rng| Head::kan(widths, grid, renorm, rng);

        let bank = if config.variant.is_two_level() {
            None
        } else {
            Some(EmbeddingBank::new(n, m, k, d, &mut rng)?)
        };
        let heads = match config.variant {
            Variant::Irt => Heads::Irt {
                theta: Fc::new(d, 1, false, &mut rng)?,
                beta: Fc::new(d, 1, false, &mut rng)?,
                disc: Fc::new(d, 1, false, &mut rng)?,
            },
            Variant::Mirt => Heads::Mirt {
                alpha: Fc::new(d, d, false, &mut rng)?,
                beta: Fc::new(d, 1, false, &mut rng)?,
            },
            Variant::Dina => {
                let mut guess = Fc::new(d, 1, false, &mut rng)?;
                let mut slip = Fc::new(d, 1, false, &mut rng)?;
                // start near g = sl ≈ 0.12
                guess.bias.assign(&[-2.0])?;
                slip.bias.assign(&[-2.0])?;
                Heads::Dina {
                    theta: Fc::new(d, k, false, &mut rng)?,
                    guess,
                    slip,
                }
            }
            Variant::Mf => Heads::Mf,
            Variant::Ncd => Heads::Ncd {
                disc: Head::mlp(&[d, 1], false, &mut rng)?,
                out: Head::mlp(&config.ncd_widths(d), true, &mut rng)?,
            },
            Variant::NcdPlus => Heads::Ncd {
                disc: kan(&[d, 1], &mut rng)?,
                out: kan(&config.kan_widths(d, 1), &mut rng)?,
            },
            Variant::Kancd => Heads::Kancd {
                stu: Head::mlp(&[d, d], false, &mut rng)?,
                diff: Head::mlp(&[d, d], false, &mut rng)?,
                disc: Head::mlp(&[d, 1], false, &mut rng)?,
                out: Head::mlp(&config.ncd_widths(d), true, &mut rng)?,
            },
            Variant::KancdPlus => Heads::Kancd {
                stu: kan(&config.kan_widths(d, d), &mut rng)?,
                diff: kan(&config.kan_widths(d, d), &mut rng)?,
                disc: kan(&config.kan_widths(d, 1), &mut rng)?,
                out: kan(&config.kan_widths(d, 1), &mut rng)?,
            },
            Variant::Kscd => Heads::Kscd {
                stu: Head::mlp(&[2 * d, d], false, &mut rng)?,
                exer: Head::mlp(&[2 * d, d], false, &mut rng)?,
            },
            Variant::KscdPlus => Heads::Kscd {
                stu: kan(&config.kan_widths(2 * d, d), &mut rng)?,
                exer: kan(&config.kan_widths(2 * d, d), &mut rng)?,
            },
            Variant::Rcd => Heads::Rcd {
                stu: Head::mlp(&[2 * d, d], false, &mut rng)?,
                exer: Head::mlp(&[2 * d, d], false, &mut rng)?,
                out: Head::mlp(&[d, d], true, &mut rng)?,
            },
            Variant::RcdPlus => Heads::Rcd {
                stu: kan(&config.kan_widths(2 * d, d), &mut rng)?,
                exer: kan(&config.kan_widths(2 * d, d), &mut rng)?,
                out: kan(&config.kan_widths(d, d), &mut rng)?,
            },
            Variant::Ka2ncdE | Variant::Ka2ncdKan => {
                let heads = config.k_heads;
                let embed = if config.variant == Variant::Ka2ncdE {
                    SubEmbeddings::Banks(
                        (0..heads)
                            .map(|_| EmbeddingBank::new(n, m, k, d, &mut rng))
                            .collect::<Result<_>>()?,
                    )
                } else {
                    SubEmbeddings::Kans(
                        (0..heads)
                            .map(|_| {
                                Ok([
                                    KanNetwork::random(&[n, d], grid, renorm, &mut rng)?,
                                    KanNetwork::random(&[m, d], grid, renorm, &mut rng)?,
                                    KanNetwork::random(&[k, d], grid, renorm, &mut rng)?,
                                ])
                            })
                            .collect::<Result<_>>()?,
                    )
                };
                let lower = (0..3 * heads)
                    .map(|_| KanNetwork::random(&[d, 1], grid, renorm, &mut rng))
                    .collect::<Result<_>>()?;
                let upper = KanNetwork::random(&[3 * heads, k, 1], grid, renorm, &mut rng)?;
                Heads::TwoLevel {
                    embed,
                    lower,
                    upper,
                }
            }
        };
        Ok(DiagnosisModel {
            config,
            q,
            bank,
            heads,
            trained_epochs: 0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn q(&self) -> &Tensor {
        &self.q
    }

    pub fn bank(&self) -> Option<&EmbeddingBank> {
        self.bank.as_ref()
    }

    pub fn bank_mut(&mut self) -> Option<&mut EmbeddingBank> {
        self.bank.as_mut()
    }

    pub fn heads(&self) -> &Heads {
        &self.heads
    }

    pub fn heads_mut(&mut self) -> &mut Heads {
        &mut self.heads
    }

    pub fn trained_epochs(&self) -> usize {
        self.trained_epochs
    }

    pub fn set_trained_epochs(&mut self, epochs: usize) {
        self.trained_epochs = epochs;
    }

    /// Every trainable tensor with a stable name, in a fixed order.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out: Named<'_> = Vec::new();
        if let Some(b) = &self.bank {
            b.collect("bank", &mut out);
        }
        match &self.heads {
            Heads::Irt { theta, beta, disc } => {
                for (name, fc) in [("theta", theta), ("beta", beta), ("disc", disc)] {
                    fc.collect(name, &mut out);
                }
            }
            Heads::Mirt { alpha, beta } => {
                alpha.collect("alpha", &mut out);
                beta.collect("beta", &mut out);
            }
            Heads::Dina { theta, guess, slip } => {
                for (name, fc) in [("theta", theta), ("guess", guess), ("slip", slip)] {
                    fc.collect(name, &mut out);
                }
            }
            Heads::Mf => {}
            Heads::Ncd { disc, out: o } => {
                disc.collect("disc", &mut out);
                o.collect("out", &mut out);
            }
            Heads::Kancd {
                stu,
                diff,
                disc,
                out: o,
            } => {
                stu.collect("stu", &mut out);
                diff.collect("diff", &mut out);
                disc.collect("disc", &mut out);
                o.collect("out", &mut out);
            }
            Heads::Kscd { stu, exer } => {
                stu.collect("stu", &mut out);
                exer.collect("exer", &mut out);
            }
            Heads::Rcd { stu, exer, out: o } => {
                stu.collect("stu", &mut out);
                exer.collect("exer", &mut out);
                o.collect("out", &mut out);
            }
            Heads::TwoLevel {
                embed,
                lower,
                upper,
            } => {
                match embed {
                    SubEmbeddings::Banks(banks) => {
                        for (i, b) in banks.iter().enumerate() {
                            b.collect(&format!("bank{i}"), &mut out);
                        }
                    }
                    SubEmbeddings::Kans(kans) => {
                        for (i, [s, e, c]) in kans.iter().enumerate() {
                            collect_kan(s, &format!("embed_s{i}"), &mut out);
                            collect_kan(e, &format!("embed_e{i}"), &mut out);
                            collect_kan(c, &format!("embed_c{i}"), &mut out);
                        }
                    }
                }
                for (i, l) in lower.iter().enumerate() {
                    collect_kan(l, &format!("lower{i}"), &mut out);
                }
                collect_kan(upper, "upper", &mut out);
            }
        }
        out
    }

    /// Mutable counterpart of [`DiagnosisModel::params`], same order.
    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: NamedMut<'_> = Vec::new();
        if let Some(b) = &mut self.bank {
            b.collect_mut("bank", &mut out);
        }
        match &mut self.heads {
            Heads::Irt { theta, beta, disc } => {
                for (name, fc) in [("theta", theta), ("beta", beta), ("disc", disc)] {
                    fc.collect_mut(name, &mut out);
                }
            }
            Heads::Mirt { alpha, beta } => {
                alpha.collect_mut("alpha", &mut out);
                beta.collect_mut("beta", &mut out);
            }
            Heads::Dina { theta, guess, slip } => {
                for (name, fc) in [("theta", theta), ("guess", guess), ("slip", slip)] {
                    fc.collect_mut(name, &mut out);
                }
            }
            Heads::Mf => {}
            Heads::Ncd { disc, out: o } => {
                disc.collect_mut("disc", &mut out);
                o.collect_mut("out", &mut out);
            }
            Heads::Kancd {
                stu,
                diff,
                disc,
                out: o,
            } => {
                stu.collect_mut("stu", &mut out);
                diff.collect_mut("diff", &mut out);
                disc.collect_mut("disc", &mut out);
                o.collect_mut("out", &mut out);
            }
            Heads::Kscd { stu, exer } => {
                stu.collect_mut("stu", &mut out);
                exer.collect_mut("exer", &mut out);
            }
            Heads::Rcd { stu, exer, out: o } => {
                stu.collect_mut("stu", &mut out);
                exer.collect_mut("exer", &mut out);
                o.collect_mut("out", &mut out);
            }
            Heads::TwoLevel {
                embed,
                lower,
                upper,
            } => {
                match embed {
                    SubEmbeddings::Banks(banks) => {
                        for (i, b) in banks.iter_mut().enumerate() {
                            b.collect_mut(&format!("bank{i}"), &mut out);
                        }
                    }
                    SubEmbeddings::Kans(kans) => {
                        for (i, [s, e, c]) in kans.iter_mut().enumerate() {
                            collect_kan_mut(s, &format!("embed_s{i}"), &mut out);
                            collect_kan_mut(e, &format!("embed_e{i}"), &mut out);
                            collect_kan_mut(c, &format!("embed_c{i}"), &mut out);
                        }
                    }
                }
                for (i, l) in lower.iter_mut().enumerate() {
                    collect_kan_mut(l, &format!("lower{i}"), &mut out);
                }
                collect_kan_mut(upper, "upper", &mut out);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Names of the KAN sub-networks, in a stable order. Empty for variants
    /// built only from FC layers.
    pub fn kan_names(&self) -> Vec<String> {
        let named = |pairs: &[(&str, &Head)]| {
            pairs
                .iter()
                .filter(|(_, h)| h.as_kan().is_some())
                .map(|(n, _)| n.to_string())
                .collect::<Vec<_>>()
        };
        match &self.heads {
            Heads::Ncd { disc, out } => named(&[("disc", disc), ("out", out)]),
            Heads::Kancd {
                stu,
                diff,
                disc,
                out,
            } => named(&[("stu", stu), ("diff", diff), ("disc", disc), ("out", out)]),
            Heads::Kscd { stu, exer } => named(&[("stu", stu), ("exer", exer)]),
            Heads::Rcd { stu, exer, out } => named(&[("stu", stu), ("exer", exer), ("out", out)]),
            Heads::TwoLevel { embed, lower, .. } => {
                let mut names = vec!["upper".to_string()];
                names.extend((0..lower.len()).map(|i| format!("lower{i}")));
                if let SubEmbeddings::Kans(kans) = embed {
                    for i in 0..kans.len() {
                        names.extend([
                            format!("embed_s{i}"),
                            format!("embed_e{i}"),
                            format!("embed_c{i}"),
                        ]);
                    }
                }
                names
            }
            _ => Vec::new(),
        }
    }

    fn capability(&self, name: &str) -> Error {
        let available = self.kan_names();
        Error::Capability(if available.is_empty() {
            format!("{} has no KAN sub-networks", self.variant())
        } else {
            format!(
                "{} has no KAN named '{name}' (available: {})",
                self.variant(),
                available.join(", ")
            )
        })
    }

    pub fn kan(&self, name: &str) -> Result<&KanNetwork> {
        let found = match (&self.heads, name) {
            (Heads::Ncd { disc, .. }, "disc") => disc.as_kan(),
            (Heads::Ncd { out, .. }, "out") => out.as_kan(),
            (Heads::Kancd { stu, .. }, "stu") => stu.as_kan(),
            (Heads::Kancd { diff, .. }, "diff") => diff.as_kan(),
            (Heads::Kancd { disc, .. }, "disc") => disc.as_kan(),
            (Heads::Kancd { out, .. }, "out") => out.as_kan(),
            (Heads::Kscd { stu, .. } | Heads::Rcd { stu, .. }, "stu") => stu.as_kan(),
            (Heads::Kscd { exer, .. } | Heads::Rcd { exer, .. }, "exer") => exer.as_kan(),
            (Heads::Rcd { out, .. }, "out") => out.as_kan(),
            (Heads::TwoLevel { upper, .. }, "upper") => Some(upper),
            (Heads::TwoLevel { lower, embed, .. }, other) => two_level_kan(lower, embed, other),
            _ => None,
        };
        found.ok_or_else(|| self.capability(name))
    }

    /// Replaces the named KAN; the replacement must have identical widths.
    pub fn set_kan(&mut self, name: &str, net: KanNetwork) -> Result<()> {
        let current = self.kan(name)?;
        if current.widths() != net.widths() {
            return Err(Error::shape("set_kan", &current.widths(), &net.widths()));
        }
        let slot: &mut KanNetwork = match (&mut self.heads, name) {
            (Heads::Ncd { disc, .. }, "disc") => kan_slot(disc),
            (Heads::Ncd { out, .. }, "out") => kan_slot(out),
            (Heads::Kancd { stu, .. }, "stu") => kan_slot(stu),
            (Heads::Kancd { diff, .. }, "diff") => kan_slot(diff),
            (Heads::Kancd { disc, .. }, "disc") => kan_slot(disc),
            (Heads::Kancd { out, .. }, "out") => kan_slot(out),
            (Heads::Kscd { stu, .. } | Heads::Rcd { stu, .. }, "stu") => kan_slot(stu),
            (Heads::Kscd { exer, .. } | Heads::Rcd { exer, .. }, "exer") => kan_slot(exer),
            (Heads::Rcd { out, .. }, "out") => kan_slot(out),
            (Heads::TwoLevel { upper, .. }, "upper") => upper,
            (Heads::TwoLevel { lower, embed, .. }, other) => {
                two_level_kan_mut(lower, embed, other).expect("name validated above")
            }
            _ => unreachable!("name validated above"),
        };
        // keep tensor identities so optimizer state stays attached
        for (dst, src) in slot.layers.iter_mut().zip(&net.layers) {
            dst.spline_coeffs.assign(src.spline_coeffs.values())?;
            dst.base_weight.assign(src.base_weight.values())?;
        }
        Ok(())
    }

    fn check_ids(&self, students: &[usize], exercises: &[usize]) -> Result<()> {
        if students.len() != exercises.len() {
            return Err(Error::shape(
                "forward",
                &[students.len()],
                &[exercises.len()],
            ));
        }
        if let Some(s) = students.iter().find(|s| **s >= self.config.n) {
            return Err(Error::Lookup(format!(
                "student {s} out of range (N = {})",
                self.config.n
            )));
        }
        if let Some(e) = exercises.iter().find(|e| **e >= self.config.m) {
            return Err(Error::Lookup(format!(
                "exercise {e} out of range (M = {})",
                self.config.m
            )));
        }
        Ok(())
    }

    /// Records the prediction `r̂` (shape `B × 1`) for a batch of pairs.
    pub fn forward(
        &self,
        g: &mut Graph,
        students: &[usize],
        exercises: &[usize],
        mode: Mode,
        trace: &mut TraceVars,
    ) -> Result<Var> {
        self.check_ids(students, exercises)?;
        let d = self.config.d as f64;
        let qv = g.constant(&self.q);
        let q_rows = g.gather_rows(qv, exercises)?;

        if let Heads::TwoLevel {
            embed,
            lower,
            upper,
        } = &self.heads
        {
            return self
                .forward_two_level(g, students, exercises, q_rows, embed, lower, upper, trace);
        }
        let bank = self
            .bank
            .as_ref()
            .expect("single-level variants own a bank");
        let (hs, he, hc) = bank.embed(g, students, exercises, q_rows)?;

        let r = match &self.heads {
            Heads::Irt { theta, beta, disc } => {
                let th = theta.forward(g, hs)?;
                let be = beta.forward(g, he)?;
                let a_raw = disc.forward(g, he)?;
                let a = g.softplus(a_raw);
                trace.put("theta", th);
                trace.put("beta", be);
                trace.put("a", a);
                let diff = g.sub(th, be)?;
                let z = g.mul(a, diff)?;
                g.sigmoid(z)
            }
            Heads::Mirt { alpha, beta } => {
                let al = alpha.forward(g, hc)?;
                let be = beta.forward(g, he)?;
                trace.put("theta", hs);
                trace.put("alpha", al);
                trace.put("beta", be);
                let prod = g.mul(al, hs)?;
                let s = g.sum_rows(prod)?;
                let z = g.sub(s, be)?;
                g.sigmoid(z)
            }
            Heads::Dina { theta, guess, slip } => {
                let z = theta.forward(g, hs)?;
                let th = match mode {
                    Mode::Train { tau, noise_seed } => {
                        if tau.is_nan() || tau <= 0.0 {
                            return Err(Error::Config(format!(
                                "Gumbel temperature must be positive, got {tau}"
                            )));
                        }
                        let noise = logistic_noise(noise_seed, g.value(z).len());
                        let noise = g.input(g.shape(z).to_vec(), noise)?;
                        let zn = g.add(z, noise)?;
                        let zt = g.scale(zn, 1.0 / tau);
                        g.sigmoid(zt)
                    }
                    Mode::Eval => {
                        let hard = g
                            .value(z)
                            .iter()
                            .map(|v| f64::from(u8::from(*v > 0.0)))
                            .collect();
                        g.input(g.shape(z).to_vec(), hard)?
                    }
                };
                trace.put("theta", th);
                let not_q = g.one_minus(q_rows);
                let q_th = g.mul(q_rows, th)?;
                let terms = g.add(not_q, q_th)?;
                let nt = g.row_product(terms)?;
                trace.put("nt", nt);
                let ag = guess.forward(g, he)?;
                let asl = slip.forward(g, he)?;
                let gs = g.sigmoid(ag);
                let ss = g.sigmoid(asl);
                trace.put("guess", gs);
                trace.put("slip", ss);
                dina_response(g, ag, asl, nt)?
            }
            Heads::Mf => {
                let prod = g.mul(hs, he)?;
                let s = g.sum_rows(prod)?;
                g.sigmoid(s)
            }
            Heads::Ncd { disc, out } => {
                let fs = g.sigmoid(hs);
                let fd = g.sigmoid(he);
                trace.put("in:disc", he);
                let disc_raw = disc.forward(g, he)?;
                let fdisc = g.sigmoid(disc_raw);
                ncd_tail(g, hc, fs, fd, fdisc, out, trace)?
            }
            Heads::Kancd {
                stu,
                diff,
                disc,
                out,
            } => {
                trace.put("in:stu", hs);
                trace.put("in:diff", he);
                trace.put("in:disc", he);
                let a = stu.forward(g, hs)?;
                let fs = g.sigmoid(a);
                let b = diff.forward(g, he)?;
                let fd = g.sigmoid(b);
                let c = disc.forward(g, he)?;
                let fdisc = g.sigmoid(c);
                ncd_tail(g, hc, fs, fd, fdisc, out, trace)?
            }
            Heads::Kscd { stu, exer } => {
                let (hsh, heh) = hat_pair(g, hs, he, hc, stu, exer, trace)?;
                let diff = g.sub(hsh, heh)?;
                let masked = g.mul(hc, diff)?;
                let s = g.sum_rows(masked)?;
                let s = g.scale(s, 1.0 / d);
                let shifted = g.add_scalar(s, 0.5);
                g.clamp(shifted, 0.0, 1.0)
            }
            Heads::Rcd { stu, exer, out } => {
                let (hsh, heh) = hat_pair(g, hs, he, hc, stu, exer, trace)?;
                let diff = g.sub(hsh, heh)?;
                trace.put("in:out", diff);
                let o = out.forward(g, diff)?;
                let s = g.sum_rows(o)?;
                let s = g.scale(s, 1.0 / d);
                g.sigmoid(s)
            }
            Heads::TwoLevel { .. } => unreachable!("handled above"),
        };
        Ok(r)
    }

    #[allow(clippy::too_many_arguments)]
    fn forward_two_level(
        &self,
        g: &mut Graph,
        students: &[usize],
        exercises: &[usize],
        q_rows: Var,
        embed: &SubEmbeddings,
        lower: &[KanNetwork],
        upper: &KanNetwork,
        trace: &mut TraceVars,
    ) -> Result<Var> {
        let mut h = Vec::with_capacity(lower.len());
        match embed {
            SubEmbeddings::Banks(banks) => {
                for bank in banks {
                    let (hs, he, hc) = bank.embed(g, students, exercises, q_rows)?;
                    h.extend([hs, he, hc]);
                }
            }
            SubEmbeddings::Kans(kans) => {
                for (i, [s, e, c]) in kans.iter().enumerate() {
                    let hs = s.forward_one_hot(g, students)?;
                    let he = e.forward_one_hot(g, exercises)?;
                    trace.put(format!("in:embed_c{i}"), q_rows);
                    let hc = c.forward(g, q_rows)?;
                    h.extend([hs, he, hc]);
                }
            }
        }
        let mut v_parts = Vec::with_capacity(lower.len());
        for (i, (net, hi)) in lower.iter().zip(h).enumerate() {
            trace.put(format!("in:lower{i}"), hi);
            v_parts.push(net.forward(g, hi)?);
        }
        let v = g.concat_cols(&v_parts)?;
        trace.put("v", v);
        trace.put("in:upper", v);
        let x0 = upper.prepare_input(g, v, 0);
        let ls = upper.layers[0].forward(g, x0)?;
        trace.put("ls", ls);
        let mut out = ls;
        for (i, layer) in upper.layers.iter().enumerate().skip(1) {
            let x = upper.prepare_input(g, out, i);
            out = layer.forward(g, x)?;
        }
        Ok(g.sigmoid(out))
    }

    /// Deterministic predictions for a batch.
    pub fn predict(&self, students: &[usize], exercises: &[usize]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let r = self.forward(
            &mut g,
            students,
            exercises,
            Mode::Eval,
            &mut TraceVars::default(),
        )?;
        Ok(g.value(r).to_vec())
    }

    pub fn predict_with_trace(
        &self,
        students: &[usize],
        exercises: &[usize],
    ) -> Result<(Vec<f64>, ForwardTrace)> {
        let mut g = Graph::new();
        let mut tv = TraceVars::default();
        let r = self.forward(&mut g, students, exercises, Mode::Eval, &mut tv)?;
        Ok((g.value(r).to_vec(), tv.resolve(&g)))
    }

    /// Clamps the weights of monotone FC layers to be non-negative.
    pub fn project_monotone(&mut self) {
        match &mut self.heads {
            Heads::Ncd { disc, out } => {
                disc.project();
                out.project();
            }
            Heads::Kancd {
                stu,
                diff,
                disc,
                out,
            } => {
                for h in [stu, diff, disc, out] {
                    h.project();
                }
            }
            Heads::Kscd { stu, exer } => {
                stu.project();
                exer.project();
            }
            Heads::Rcd { stu, exer, out } => {
                for h in [stu, exer, out] {
                    h.project();
                }
            }
            Heads::Irt { theta, beta, disc } => {
                for fc in [theta, beta, disc] {
                    fc.project();
                }
            }
            Heads::Mirt { alpha, beta } => {
                alpha.project();
                beta.project();
            }
            Heads::Dina { theta, guess, slip } => {
                for fc in [theta, guess, slip] {
                    fc.project();
                }
            }
            Heads::Mf | Heads::TwoLevel { .. } => {}
        }
    }

    /// Per-concept proficiency of `student`. `exercises` lists the
    /// student's training exercises; only the two-level variants use it, and
    /// fall back to every exercise when it is empty.
    pub fn mastery(&self, student: usize, exercises: &[usize]) -> Result<MasteryVector> {
        if student >= self.config.n {
            return Err(Error::Lookup(format!(
                "student {student} out of range (N = {})",
                self.config.n
            )));
        }
        let k = self.config.k;
        let mut g = Graph::new();
        let (values, source): (Vec<f64>, &'static str) = match (&self.heads, &self.bank) {
            (Heads::TwoLevel { .. }, _) => {
                let all: Vec<usize>;
                let ex = if exercises.is_empty() {
                    all = (0..self.config.m).collect();
                    &all
                } else {
                    exercises
                };
                let students = vec![student; ex.len()];
                let mut tv = TraceVars::default();
                self.forward(&mut g, &students, ex, Mode::Eval, &mut tv)?;
                let ls = tv
                    .resolve(&g)
                    .values
                    .remove("ls")
                    .expect("two-level forward records ls");
                let mut mean = vec![0.0; k];
                for r in 0..ex.len() {
                    for (m, v) in mean.iter_mut().zip(ls.row(r)) {
                        *m += crate::autodiff::sigmoid(*v);
                    }
                }
                mean.iter_mut().for_each(|m| *m /= ex.len() as f64);
                (mean, "sigmoid(ls)")
            }
            (heads, Some(bank)) => {
                let ws = g.param(&bank.w_s);
                let hs = g.gather_rows(ws, &[student])?;
                match heads {
                    Heads::Irt { theta, .. } => {
                        let th = theta.forward(&mut g, hs)?;
                        let p = g.sigmoid(th);
                        (vec![g.value(p)[0]; k], "sigmoid(theta)")
                    }
                    Heads::Mirt { .. } | Heads::Mf => {
                        let p = g.sigmoid(hs);
                        (g.value(p).to_vec(), "sigmoid(h_s)")
                    }
                    Heads::Dina { theta, .. } => {
                        let z = theta.forward(&mut g, hs)?;
                        let p = g.sigmoid(z);
                        (g.value(p).to_vec(), "theta")
                    }
                    Heads::Ncd { .. } => {
                        let p = g.sigmoid(hs);
                        (g.value(p).to_vec(), "f_s")
                    }
                    Heads::Kancd { stu, .. } => {
                        let a = stu.forward(&mut g, hs)?;
                        let p = g.sigmoid(a);
                        (g.value(p).to_vec(), "f_s")
                    }
                    Heads::Kscd { stu, .. } | Heads::Rcd { stu, .. } => {
                        // one row per concept, conditioned on that concept's embedding
                        let rows = g.gather_rows(ws, &vec![student; k])?;
                        let wq = g.param(&bank.w_q);
                        let cat = g.concat_cols(&[rows, wq])?;
                        let raw = stu.forward(&mut g, cat)?;
                        let hat = g.sigmoid(raw);
                        let vals = g.value(hat);
                        ((0..k).map(|c| vals[c * k + c]).collect(), "h_s_hat")
                    }
                    Heads::TwoLevel { .. } => unreachable!(),
                }
            }
            (_, None) => unreachable!("single-level variants own a bank"),
        };
        Ok(MasteryVector {
            student,
            values: values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            source,
            untrained: self.trained_epochs == 0,
        })
    }
}

fn kan_slot(head: &mut Head) -> &mut KanNetwork {
    match head {
        Head::Kan(k) => k,
        Head::Mlp(_) => unreachable!("name validated as a KAN"),
    }
}

fn parse_index(name: &str, prefix: &str) -> Option<usize> {
    name.strip_prefix(prefix)?.parse().ok()
}

fn two_level_kan<'a>(
    lower: &'a [KanNetwork],
    embed: &'a SubEmbeddings,
    name: &str,
) -> Option<&'a KanNetwork> {
    if let Some(i) = parse_index(name, "lower") {
        return lower.get(i);
    }
    let SubEmbeddings::Kans(kans) = embed else {
        return None;
    };
    for (slot, prefix) in ["embed_s", "embed_e", "embed_c"].iter().enumerate() {
        if let Some(i) = parse_index(name, prefix) {
            return kans.get(i).map(|k| &k[slot]);
        }
    }
    None
}

fn two_level_kan_mut<'a>(
    lower: &'a mut [KanNetwork],
    embed: &'a mut SubEmbeddings,
    name: &str,
) -> Option<&'a mut KanNetwork> {
    if let Some(i) = parse_index(name, "lower") {
        return lower.get_mut(i);
    }
    let SubEmbeddings::Kans(kans) = embed else {
        return None;
    };
    for (slot, prefix) in ["embed_s", "embed_e", "embed_c"].iter().enumerate() {
        if let Some(i) = parse_index(name, prefix) {
            return kans.get_mut(i).map(|k| &mut k[slot]);
        }
    }
    None
}

/// `g^{1−nt}(1−sl)^{nt}` from guess/slip logits, computed in log space.
pub fn dina_response(g: &mut Graph, guess_logit: Var, slip_logit: Var, nt: Var) -> Result<Var> {
    let log_g = g.log_sigmoid(guess_logit);
    let neg_slip = g.scale(slip_logit, -1.0);
    let log_not_slip = g.log_sigmoid(neg_slip);
    let gap = g.sub(log_not_slip, log_g)?;
    let weighted = g.mul(nt, gap)?;
    let log_p = g.add(log_g, weighted)?;
    Ok(g.exp(log_p))
}

fn ncd_tail(
    g: &mut Graph,
    hc: Var,
    fs: Var,
    fd: Var,
    fdisc: Var,
    out: &Head,
    trace: &mut TraceVars,
) -> Result<Var> {
    trace.put("f_s", fs);
    trace.put("f_diff", fd);
    trace.put("f_disc", fdisc);
    let diff = g.sub(fs, fd)?;
    let masked = g.mul(hc, diff)?;
    let y = g.mul_col(masked, fdisc)?;
    trace.put("y", y);
    trace.put("in:out", y);
    let o = out.forward(g, y)?;
    Ok(g.sigmoid(o))
}

fn hat_pair(
    g: &mut Graph,
    hs: Var,
    he: Var,
    hc: Var,
    stu: &Head,
    exer: &Head,
    trace: &mut TraceVars,
) -> Result<(Var, Var)> {
    let s_in = g.concat_cols(&[hs, hc])?;
    let e_in = g.concat_cols(&[he, hc])?;
    trace.put("in:stu", s_in);
    trace.put("in:exer", e_in);
    let s_raw = stu.forward(g, s_in)?;
    let hsh = g.sigmoid(s_raw);
    let e_raw = exer.forward(g, e_in)?;
    let heh = g.sigmoid(e_raw);
    trace.put("h_s_hat", hsh);
    trace.put("h_e_hat", heh);
    Ok((hsh, heh))
}
