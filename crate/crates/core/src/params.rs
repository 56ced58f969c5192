//! Uniform access to every trainable tensor of a parameter structure, in a
//! fixed order. The order defines optimizer state layout and the checkpoint
//! format, so it must not change between versions of the same format.

/// Read-only view of one named parameter.
pub struct ParamView<'a> {
    pub name: String,
    pub shape: (usize, usize),
    pub values: &'a [f64],
}

pub struct ParamViewMut<'a> {
    pub name: String,
    pub shape: (usize, usize),
    pub values: &'a mut [f64],
}

pub trait Parameters: Clone {
    fn params(&self) -> Vec<ParamView<'_>>;

    fn params_mut(&mut self) -> Vec<ParamViewMut<'_>>;

    /// Same structure with every value set to zero.
    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for p in z.params_mut() {
            p.values.fill(0.0);
        }
        z
    }

    fn scalar_count(&self) -> usize {
        self.params().iter().map(|p| p.values.len()).sum()
    }

    /// `self += scale * other`, parameter by parameter.
    fn add_scaled(&mut self, other: &Self, scale: f64) {
        let src = other.params();
        for (dst, src) in self.params_mut().into_iter().zip(src) {
            debug_assert_eq!(dst.shape, src.shape);
            for (d, s) in dst.values.iter_mut().zip(src.values) {
                *d += scale * s;
            }
        }
    }

    /// All values concatenated in parameter order.
    fn flatten(&self) -> Vec<f64> {
        self.params()
            .iter()
            .flat_map(|p| p.values.iter().copied())
            .collect()
    }

    /// Each parameter copied into a matrix of its shape.
    fn to_matrices(&self) -> Vec<crate::tensor::Matrix> {
        self.params()
            .iter()
            .map(|p| {
                crate::tensor::Matrix::from_vec(p.shape.0, p.shape.1, p.values.to_vec())
                    .expect("view shape matches its data")
            })
            .collect()
    }

    /// Inverse of [`Parameters::to_matrices`].
    fn assign_matrices(&mut self, values: &[crate::tensor::Matrix]) -> crate::error::Result<()> {
        let targets = self.params_mut();
        if targets.len() != values.len() {
            return Err(crate::error::argument(format!(
                "expected {} parameter tensors, got {}",
                targets.len(),
                values.len()
            )));
        }
        for (dst, src) in targets.into_iter().zip(values) {
            if dst.shape != src.shape() {
                return Err(crate::error::Error::ShapeMismatch {
                    name: dst.name,
                    expected: dst.shape,
                    found: src.shape(),
                });
            }
            dst.values.copy_from_slice(src.as_slice());
        }
        Ok(())
    }

    fn all_finite(&self) -> bool {
        self.params()
            .iter()
            .all(|p| p.values.iter().all(|v| v.is_finite()))
    }
}

pub(crate) fn view<'a>(
    prefix: &str,
    name: &str,
    shape: (usize, usize),
    values: &'a [f64],
) -> ParamView<'a> {
    ParamView {
        name: format!("{prefix}{name}"),
        shape,
        values,
    }
}

pub(crate) fn view_mut<'a>(
    prefix: &str,
    name: &str,
    shape: (usize, usize),
    values: &'a mut [f64],
) -> ParamViewMut<'a> {
    ParamViewMut {
        name: format!("{prefix}{name}"),
        shape,
        values,
    }
}
