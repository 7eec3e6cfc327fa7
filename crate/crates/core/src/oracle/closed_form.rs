use crate::error::{invalid, Error, Result};

/// Value of `Y_0` for the driver `z . theta` with `X = W` Brownian and terminal `tag`.
///
/// Supported tags: `"x_T"` (one-dimensional, `h = W_T`), giving `theta T`.
pub fn closed_form_linear(theta: &[f64], horizon: f64, terminal: &str) -> Result<f64> {
    if !(horizon > 0.0) || theta.iter().any(|v| !v.is_finite()) {
        return Err(invalid("closed form needs a positive horizon and finite theta"));
    }
    match terminal {
        "x_T" if theta.len() == 1 => Ok(theta[0] * horizon),
        "x_T" => Err(invalid("terminal x_T needs a one-dimensional theta")),
        other => Err(Error::UnsupportedTerminal(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(closed_form_linear(&[0.0], 3.0, "x_T").unwrap(), 0.0);
        assert_eq!(closed_form_linear(&[0.5], 1.0, "x_T").unwrap(), 0.5);
        assert_eq!(closed_form_linear(&[1.0], 2.0, "x_T").unwrap(), 2.0);
        assert!(matches!(
            closed_form_linear(&[1.0], 1.0, "x_T^2"),
            Err(Error::UnsupportedTerminal(_))
        ));
    }
}
