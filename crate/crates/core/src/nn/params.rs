use super::Tensor2;

pub struct ParamView<'a> {
    pub name: String,
    pub tensor: &'a Tensor2,
    pub frozen: bool,
}

pub struct ParamViewMut<'a> {
    pub name: String,
    pub tensor: &'a mut Tensor2,
    pub frozen: bool,
}

/// A module whose parameters can be enumerated in a stable order.
pub trait Parameterized {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>);
    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a>>);

    fn params(&self) -> Vec<ParamView<'_>> {
        let mut out = Vec::new();
        self.collect_params("", &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<ParamViewMut<'_>> {
        let mut out = Vec::new();
        self.collect_params_mut("", &mut out);
        out
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Gradient buffer with the shape of `p`, all zeros.
pub fn zeros_like<P: Parameterized + Clone>(p: &P) -> P {
    let mut z = p.clone();
    for v in z.params_mut() {
        v.tensor.fill(0.0);
    }
    z
}

/// `into += from`, parameter by parameter.
pub fn accumulate<P: Parameterized>(into: &mut P, from: &P) {
    let src = from.params();
    for (dst, s) in into.params_mut().into_iter().zip(src) {
        dst.tensor.add_assign(s.tensor);
    }
}

pub fn param_count<P: Parameterized>(p: &P, trainable_only: bool) -> usize {
    p.params().iter().filter(|v| !(trainable_only && v.frozen)).map(|v| v.tensor.len()).sum()
}
