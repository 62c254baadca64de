//! Scene manifest: one view per line.
//!
//! ```text
//! # comment
//! view name=<token> image=<path> split=train|eval width=<u> height=<u>
//!      fx=<f> fy=<f> cx=<f> cy=<f> rot=<9 comma-separated f> trans=<3 comma-separated f>
//! ```
//!
//! Each view is a single line; fields are `key=value` tokens separated by
//! whitespace, in any order, each exactly once. `rot` is the world-to-camera
//! rotation in row-major order and `trans` its translation, so a world point
//! `x` maps to `rot · x + trans`. Floats are written in shortest round-trip
//! form, so save followed by load is bit-exact. Relative image paths resolve
//! against the manifest's directory. Blank lines and lines starting with `#`
//! are ignored.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::frame::Image;
use crate::sampler::View;

use super::png::read_png;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestView {
    pub name: String,
    pub image: PathBuf,
    pub camera: Camera,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SceneManifest {
    pub views: Vec<ManifestView>,
}

const KEYS: [&str; 11] = ["name", "image", "split", "width", "height", "fx", "fy", "cx", "cy", "rot", "trans"];

fn parse_floats(line: usize, key: &str, text: &str, count: usize) -> Result<Vec<f64>> {
    let vals: Vec<f64> = text
        .split(',')
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Manifest {
            line,
            message: format!("{key}: {e}"),
        })?;
    if vals.len() != count {
        return Err(Error::Manifest {
            line,
            message: format!("{key} needs {count} values, got {}", vals.len()),
        });
    }
    Ok(vals)
}

impl SceneManifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut views = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut tokens = trimmed.split_whitespace();
            if tokens.next() != Some("view") {
                return Err(Error::Manifest {
                    line,
                    message: "expected a line starting with `view`".into(),
                });
            }
            let mut fields: [Option<&str>; 11] = [None; 11];
            for tok in tokens {
                let (key, value) = tok.split_once('=').ok_or_else(|| Error::Manifest {
                    line,
                    message: format!("token `{tok}` is not key=value"),
                })?;
                let slot = KEYS.iter().position(|k| *k == key).ok_or_else(|| Error::Manifest {
                    line,
                    message: format!("unknown field `{key}`"),
                })?;
                if fields[slot].replace(value).is_some() {
                    return Err(Error::Manifest {
                        line,
                        message: format!("duplicate field `{key}`"),
                    });
                }
            }
            let get = |k: usize| {
                fields[k].ok_or_else(|| Error::Manifest {
                    line,
                    message: format!("missing field `{}`", KEYS[k]),
                })
            };
            let uint = |k: usize| -> Result<usize> {
                get(k)?.parse().map_err(|e| Error::Manifest {
                    line,
                    message: format!("{}: {e}", KEYS[k]),
                })
            };
            let float = |k: usize| -> Result<f64> { Ok(parse_floats(line, KEYS[k], get(k)?, 1)?[0]) };
            let split = match get(2)? {
                "train" => Split::Train,
                "eval" => Split::Eval,
                other => {
                    return Err(Error::Manifest {
                        line,
                        message: format!("split must be train or eval, got `{other}`"),
                    })
                }
            };
            let rot = parse_floats(line, "rot", get(9)?, 9)?;
            let trans = parse_floats(line, "trans", get(10)?, 3)?;
            let camera = Camera::new(
                Matrix3::from_row_slice(&rot),
                Vector3::from_column_slice(&trans),
                float(5)?,
                float(6)?,
                float(7)?,
                float(8)?,
                uint(3)?,
                uint(4)?,
            )
            .map_err(|e| Error::Manifest {
                line,
                message: e.to_string(),
            })?;
            views.push(ManifestView {
                name: get(0)?.to_string(),
                image: PathBuf::from(get(1)?),
                camera,
                split,
            });
        }
        Ok(Self { views })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# codesplat scene manifest\n");
        for v in &self.views {
            let c = &v.camera;
            let rot: Vec<String> = (0..3)
                .flat_map(|r| (0..3).map(move |k| (r, k)))
                .map(|(r, k)| format!("{:?}", c.rotation[(r, k)]))
                .collect();
            let trans: Vec<String> = c.translation.iter().map(|t| format!("{t:?}")).collect();
            writeln!(
                out,
                "view name={} image={} split={} width={} height={} fx={:?} fy={:?} cx={:?} cy={:?} rot={} trans={}",
                v.name,
                v.image.display(),
                v.split.as_str(),
                c.width,
                c.height,
                c.fx,
                c.fy,
                c.cx,
                c.cy,
                rot.join(","),
                trans.join(",")
            )
            .unwrap();
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Parses the file and checks that every image exists with the declared size.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let manifest = Self::parse(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for v in &manifest.views {
            let p = base.join(&v.image);
            let (w, h) = image::image_dimensions(&p).map_err(|e| Error::Image {
                path: p.clone(),
                message: e.to_string(),
            })?;
            if (w as usize, h as usize) != (v.camera.width, v.camera.height) {
                return Err(Error::Image {
                    path: p,
                    message: format!(
                        "is {w}x{h} but view `{}` declares {}x{}",
                        v.name, v.camera.width, v.camera.height
                    ),
                });
            }
        }
        Ok(manifest)
    }

    /// Loads the manifest at `path` with its images as float views, optionally
    /// restricted to one split.
    pub fn load_views(path: impl AsRef<Path>, split: Option<Split>) -> Result<Vec<(ManifestView, View)>> {
        let path = path.as_ref();
        let manifest = Self::load(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        manifest
            .views
            .into_iter()
            .filter(|v| split.is_none_or(|s| v.split == s))
            .map(|v| {
                let image = read_png(base.join(&v.image))?;
                let view = View {
                    camera: v.camera.clone(),
                    image,
                };
                Ok((v, view))
            })
            .collect()
    }
}

/// Checks that `image` matches the camera's declared size.
pub fn check_view_size(camera: &Camera, image: &Image) -> Result<()> {
    if (image.width(), image.height()) != (camera.width, camera.height) {
        return Err(Error::invalid(format!(
            "image is {}x{} but camera is {}x{}",
            image.width(),
            image.height(),
            camera.width,
            camera.height
        )));
    }
    Ok(())
}
