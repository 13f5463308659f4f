//! API cost estimate for annotating a corpus.
//!
//! One object costs 30 image inputs (6 views, 5 samples each), 5k input
//! tokens and 21k output tokens. Token prices are per 1k tokens.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const IMAGES_PER_OBJECT: f64 = 30.0;
pub const INPUT_KTOKENS_PER_OBJECT: f64 = 5.0;
pub const OUTPUT_KTOKENS_PER_OBJECT: f64 = 21.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostError {
    #[error("price `{name}` is negative or not finite: {value}")]
    NegativePrice { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prices {
    pub image: f64,
    pub input_per_1k: f64,
    pub output_per_1k: f64,
}

pub fn estimate_cost(num_objects: u64, prices: Prices) -> Result<f64, CostError> {
    for (name, value) in [
        ("image", prices.image),
        ("input_per_1k", prices.input_per_1k),
        ("output_per_1k", prices.output_per_1k),
    ] {
        if !(value.is_finite() && value >= 0.0) {
            return Err(CostError::NegativePrice { name, value });
        }
    }
    let per_object = IMAGES_PER_OBJECT * prices.image
        + INPUT_KTOKENS_PER_OBJECT * prices.input_per_1k
        + OUTPUT_KTOKENS_PER_OBJECT * prices.output_per_1k;
    Ok(num_objects as f64 * per_object)
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: Prices = Prices {
        image: 0.001,
        input_per_1k: 0.5,
        output_per_1k: 1.0,
    };

    #[test]
    fn single_object() {
        assert_eq!(estimate_cost(1, P).unwrap(), 23.53);
    }

    #[test]
    fn zero_and_linear() {
        let zero = Prices {
            image: 0.0,
            input_per_1k: 0.0,
            output_per_1k: 0.0,
        };
        assert_eq!(estimate_cost(7, zero).unwrap(), 0.0);
        assert!((estimate_cost(10, P).unwrap() - 10.0 * estimate_cost(1, P).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn negative_price() {
        let p = Prices { image: -0.1, ..P };
        assert_eq!(
            estimate_cost(1, p),
            Err(CostError::NegativePrice {
                name: "image",
                value: -0.1
            })
        );
    }
}
