//! Serde adapter writing fixed-size matrices as row-major nested arrays.

use nalgebra::SMatrix;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub fn serialize<S, const R: usize, const C: usize>(
    m: &SMatrix<f64, R, C>,
    serializer: S,
) -> Result<S::Ok, S::Error>
where
    S: Serializer,
{
    let rows: Vec<Vec<f64>> = (0..R)
        .map(|i| (0..C).map(|j| m[(i, j)]).collect())
        .collect();
    rows.serialize(serializer)
}

pub fn deserialize<'de, D, const R: usize, const C: usize>(
    deserializer: D,
) -> Result<SMatrix<f64, R, C>, D::Error>
where
    D: Deserializer<'de>,
{
    let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
    if rows.len() != R || rows.iter().any(|r| r.len() != C) {
        return Err(D::Error::custom(format!("expected a {R}x{C} matrix")));
    }
    Ok(SMatrix::from_fn(|i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use nalgebra::Matrix2x3;
    use serde::{Deserialize, Serialize};

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Wrap {
        #[serde(with = "super")]
        m: Matrix2x3<f64>,
    }

    #[test]
    fn row_major_round_trip() {
        let w = Wrap {
            m: Matrix2x3::new(1.0, 2.0, 3.0, 4.0, 5.0, 0.1 + 0.2),
        };
        let text = serde_json::to_string(&w).unwrap();
        assert_eq!(text, r#"{"m":[[1.0,2.0,3.0],[4.0,5.0,0.30000000000000004]]}"#);
        assert_eq!(serde_json::from_str::<Wrap>(&text).unwrap(), w);
        assert!(serde_json::from_str::<Wrap>(r#"{"m":[[1.0]]}"#).is_err());
    }
}
