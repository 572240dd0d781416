//! Deterministic pixel-space maps used to synthesize feature-shift domains.

use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainTransform {
    Identity,
    /// `1 − v`.
    Invert,
    /// Bilinear rotation about the image centre; uncovered pixels become 0.
    Rotate {
        degrees: f64,
    },
    /// Separable Gaussian blur, kernel radius `ceil(3σ)`, edges clamped.
    Blur {
        sigma: f64,
    },
    /// `0.5 + factor · (v − 0.5)`, clamped to `[0, 1]`.
    Contrast {
        factor: f64,
    },
}

impl DomainTransform {
    /// Identity, inversion, rotation by 15°, blur and contrast reduction.
    pub fn default_domains() -> Vec<DomainTransform> {
        vec![
            DomainTransform::Identity,
            DomainTransform::Invert,
            DomainTransform::Rotate { degrees: 15.0 },
            DomainTransform::Blur { sigma: 1.0 },
            DomainTransform::Contrast { factor: 0.4 },
        ]
    }

    pub fn name(&self) -> String {
        match self {
            DomainTransform::Identity => "identity".into(),
            DomainTransform::Invert => "invert".into(),
            DomainTransform::Rotate { degrees } => format!("rotate{degrees}"),
            DomainTransform::Blur { sigma } => format!("blur{sigma}"),
            DomainTransform::Contrast { factor } => format!("contrast{factor}"),
        }
    }

    fn needs_geometry(&self) -> bool {
        matches!(
            self,
            DomainTransform::Rotate { .. } | DomainTransform::Blur { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            DomainTransform::Rotate { degrees } => degrees.is_finite(),
            DomainTransform::Blur { sigma } => sigma.is_finite() && sigma > 0.0,
            DomainTransform::Contrast { factor } => factor.is_finite() && factor >= 0.0,
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(FedError::Validation(format!(
                "invalid transform parameters: {self:?}"
            )))
        }
    }

    /// Applies the map to one flattened image. Geometric transforms require
    /// `image` and fail if `rows · cols` differs from the pixel count.
    pub fn apply(&self, pixels: &[f64], image: Option<(usize, usize)>) -> Result<Vec<f64>> {
        self.validate()?;
        if self.needs_geometry() {
            match image {
                Some((h, w)) if h * w == pixels.len() => {}
                Some((h, w)) => {
                    return Err(FedError::Validation(format!(
                        "{} expects {h}x{w} pixels, got {}",
                        self.name(),
                        pixels.len()
                    )))
                }
                None => {
                    return Err(FedError::Validation(format!(
                        "{} needs image dimensions",
                        self.name()
                    )))
                }
            }
        }
        let out = match *self {
            DomainTransform::Identity => pixels.to_vec(),
            DomainTransform::Invert => pixels.iter().map(|v| 1.0 - v).collect(),
            DomainTransform::Contrast { factor } => pixels
                .iter()
                .map(|v| (0.5 + factor * (v - 0.5)).clamp(0.0, 1.0))
                .collect(),
            DomainTransform::Rotate { degrees } => {
                let (h, w) = image.unwrap_or_default();
                rotate(pixels, h, w, degrees)
            }
            DomainTransform::Blur { sigma } => {
                let (h, w) = image.unwrap_or_default();
                blur(pixels, h, w, sigma)
            }
        };
        if out.len() != pixels.len() {
            return Err(FedError::Validation(format!(
                "{} produced {} pixels from {}",
                self.name(),
                out.len(),
                pixels.len()
            )));
        }
        Ok(out)
    }
}

fn rotate(px: &[f64], h: usize, w: usize, degrees: f64) -> Vec<f64> {
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let at = |y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            px[y as usize * w + x as usize]
        }
    };
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            // inverse map: output pixel samples the source rotated by −θ
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let (x0, y0) = (x0 as isize, y0 as isize);
            out[y * w + x] = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
                + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
        }
    }
    out
}

fn blur(px: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = (-radius..=radius)
                .zip(&kernel)
                .map(|(k, kv)| kv * px[y * w + clamp(x as isize + k, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (-radius..=radius)
                .zip(&kernel)
                .map(|(k, kv)| kv * tmp[clamp(y as isize + k, h) * w + x])
                .sum();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(h: usize, w: usize) -> Vec<f64> {
        (0..h * w).map(|i| (i % 7) as f64 / 6.0).collect()
    }

    #[test]
    fn pointwise_maps() {
        let px = vec![0.0, 0.25, 1.0];
        assert_eq!(DomainTransform::Identity.apply(&px, None).unwrap(), px);
        assert_eq!(
            DomainTransform::Invert.apply(&px, None).unwrap(),
            vec![1.0, 0.75, 0.0]
        );
        assert_eq!(
            DomainTransform::Contrast { factor: 0.5 }
                .apply(&px, None)
                .unwrap(),
            vec![0.25, 0.375, 0.75]
        );
    }

    #[test]
    fn zero_rotation_is_identity() {
        let px = img(5, 4);
        let out = DomainTransform::Rotate { degrees: 0.0 }
            .apply(&px, Some((5, 4)))
            .unwrap();
        for (a, b) in px.iter().zip(&out) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn quarter_turn_moves_pixels() {
        // 3x3 with a single lit pixel at the top-middle
        let mut px = vec![0.0; 9];
        px[1] = 1.0;
        let out = DomainTransform::Rotate { degrees: 90.0 }
            .apply(&px, Some((3, 3)))
            .unwrap();
        let lit: Vec<usize> = (0..9).filter(|&i| out[i] > 0.5).collect();
        assert_eq!(lit.len(), 1);
        assert_ne!(lit[0], 1);
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn blur_preserves_constant_image_and_mass() {
        let px = vec![0.3; 36];
        let out = DomainTransform::Blur { sigma: 1.0 }
            .apply(&px, Some((6, 6)))
            .unwrap();
        assert!(out.iter().all(|v| (v - 0.3).abs() < 1e-12));

        let mut spike = vec![0.0; 121];
        spike[60] = 1.0;
        let out = DomainTransform::Blur { sigma: 1.0 }
            .apply(&spike, Some((11, 11)))
            .unwrap();
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(out[60] < 0.5 && out[60] > out[61] && out[61] > out[62]);
    }

    #[test]
    fn geometry_mismatch_is_validation_error() {
        let px = img(4, 4);
        for t in [
            DomainTransform::Rotate { degrees: 15.0 },
            DomainTransform::Blur { sigma: 1.0 },
        ] {
            assert!(matches!(
                t.apply(&px, Some((3, 5))),
                Err(FedError::Validation(_))
            ));
            assert!(matches!(t.apply(&px, None), Err(FedError::Validation(_))));
        }
        assert!(DomainTransform::Blur { sigma: 0.0 }.validate().is_err());
    }

    #[test]
    fn json_shape() {
        let t: DomainTransform = serde_json::from_str(r#"{"kind":"rotate","degrees":15}"#).unwrap();
        assert_eq!(t, DomainTransform::Rotate { degrees: 15.0 });
        let s = serde_json::to_string(&DomainTransform::Invert).unwrap();
        assert_eq!(s, r#"{"kind":"invert"}"#);
    }
}
