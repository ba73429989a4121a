use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Role-specific parameter sets. Encoder and decoder are shared by both
/// domains; each discriminator owns its own set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    Encoder,
    Decoder,
    SegDiscriminator,
    StyleDiscriminator1,
    StyleDiscriminator2,
}

impl Group {
    pub const ALL: [Group; 5] = [
        Group::Encoder,
        Group::Decoder,
        Group::SegDiscriminator,
        Group::StyleDiscriminator1,
        Group::StyleDiscriminator2,
    ];
    pub const GENERATOR: [Group; 2] = [Group::Encoder, Group::Decoder];
    pub const DISCRIMINATORS: [Group; 3] =
        [Group::SegDiscriminator, Group::StyleDiscriminator1, Group::StyleDiscriminator2];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub group: Group,
    pub value: Tensor<T>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, group: Group, value: Tensor<T>) -> ParamId {
        self.params.push(Param { name: name.into(), group, value });
        ParamId(self.params.len() - 1)
    }

    /// Conv kernel with fan-in scaled normal entries, `std = sqrt(2 / fan_in)`.
    pub fn add_kaiming<R: Rng>(
        &mut self,
        name: impl Into<String>,
        group: Group,
        shape: &[usize],
        rng: &mut R,
    ) -> ParamId {
        let fan_in: usize = shape[1..].iter().product();
        let std = (2.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::lit(z * std)
            })
            .collect();
        self.add(name, group, Tensor::new(shape.to_vec(), data).expect("kaiming shape"))
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids_in(&self, group: Group) -> Vec<ParamId> {
        self.iter().filter(|(_, p)| p.group == group).map(|(id, _)| id).collect()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Inserts every parameter into `g` as a leaf; only members of
    /// `trainable` receive gradients.
    pub fn bind(&self, g: &mut Graph<T>, trainable: &[Group]) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| g.leaf(p.value.clone(), trainable.contains(&p.group)))
            .collect();
        Bound { vars }
    }

    /// Order-sensitive FNV-1a digest of the raw bits of one group.
    pub fn checksum(&self, group: Group) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for p in self.params.iter().filter(|p| p.group == group) {
            for v in p.value.data() {
                for byte in v.to_f64_lossy().to_bits().to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }

    pub fn num_values(&self, group: Group) -> usize {
        self.params.iter().filter(|p| p.group == group).map(|p| p.value.numel()).sum()
    }
}

/// Graph handles of a [`ParamStore`] for one forward pass.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}
