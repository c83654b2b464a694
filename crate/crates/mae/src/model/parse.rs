//! Plain-text model description files.
//!
//! Line-oriented, `#` starts a comment:
//!
//! ```text
//! joint <axis_x> <axis_y> <axis_z> <min_rad> <max_rad>
//! link <length_mm> <mass_kg> <com_x> <com_y> <com_z>
//! route <link>:<x>,<y>,<z> <link>:<x>,<y>,<z> ...
//! elongation <k_d> <a> <b>
//! ```
//!
//! Joints and links are taken in file order; joint `j` connects link `j` to
//! link `j+1`, so a D-joint file needs D+1 links.

use nalgebra::{Unit, Vector3};

use super::{ElongationParams, GeometricModel, JointSpec, LinkSpec, MuscleRoute, ViaPoint};
use crate::error::{Error, Result};

fn parse_err(file: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { file: file.to_string(), line, message: message.into() }
}

fn parse_f64(file: &str, line: usize, token: &str, what: &str) -> Result<f64> {
    token
        .parse::<f64>()
        .map_err(|_| parse_err(file, line, format!("bad {what} value '{token}'")))
}

/// Parse a model file. `file` is only used in error messages.
pub fn parse_model(text: &str, file: &str) -> Result<GeometricModel> {
    let mut joints = Vec::new();
    let mut links = Vec::new();
    let mut routes = Vec::new();
    let mut elongation: Option<ElongationParams> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let keyword = tokens.next().unwrap();
        let rest: Vec<&str> = tokens.collect();
        match keyword {
            "joint" => {
                if rest.len() != 5 {
                    return Err(parse_err(file, line_no, "joint needs: ax ay az min max"));
                }
                let v: Vec<f64> = rest
                    .iter()
                    .map(|t| parse_f64(file, line_no, t, "joint"))
                    .collect::<Result<_>>()?;
                let axis = Vector3::new(v[0], v[1], v[2]);
                if axis.norm() < 1e-9 {
                    return Err(parse_err(file, line_no, "joint axis must be nonzero"));
                }
                joints.push(JointSpec {
                    axis: Unit::new_normalize(axis),
                    limits: [v[3], v[4]],
                });
            }
            "link" => {
                if rest.len() != 5 {
                    return Err(parse_err(file, line_no, "link needs: length mass cx cy cz"));
                }
                let v: Vec<f64> = rest
                    .iter()
                    .map(|t| parse_f64(file, line_no, t, "link"))
                    .collect::<Result<_>>()?;
                links.push(LinkSpec {
                    length: v[0],
                    mass: v[1],
                    com: Vector3::new(v[2], v[3], v[4]),
                });
            }
            "route" => {
                if rest.len() < 2 {
                    return Err(parse_err(file, line_no, "route needs at least 2 via-points"));
                }
                let mut points = Vec::with_capacity(rest.len());
                for token in &rest {
                    let (link_str, coords) = token.split_once(':').ok_or_else(|| {
                        parse_err(file, line_no, format!("via-point '{token}' missing ':'"))
                    })?;
                    let link = link_str.parse::<usize>().map_err(|_| {
                        parse_err(file, line_no, format!("bad link index '{link_str}'"))
                    })?;
                    let xyz: Vec<f64> = coords
                        .split(',')
                        .map(|c| parse_f64(file, line_no, c, "via-point coordinate"))
                        .collect::<Result<_>>()?;
                    if xyz.len() != 3 {
                        return Err(parse_err(
                            file,
                            line_no,
                            format!("via-point '{token}' needs 3 coordinates"),
                        ));
                    }
                    points.push(ViaPoint { link, offset: Vector3::new(xyz[0], xyz[1], xyz[2]) });
                }
                routes.push(MuscleRoute { points });
            }
            "elongation" => {
                if rest.len() != 3 {
                    return Err(parse_err(file, line_no, "elongation needs: k_d a b"));
                }
                elongation = Some(ElongationParams {
                    k_d: parse_f64(file, line_no, rest[0], "elongation")?,
                    a: parse_f64(file, line_no, rest[1], "elongation")?,
                    b: parse_f64(file, line_no, rest[2], "elongation")?,
                });
            }
            other => {
                return Err(parse_err(file, line_no, format!("unknown keyword '{other}'")));
            }
        }
    }

    let elongation = elongation
        .ok_or_else(|| parse_err(file, text.lines().count(), "missing elongation line"))?;
    let model = GeometricModel { joints, links, routes, elongation };
    model.validate()?;
    Ok(model)
}

/// Serialize a model in the same format `parse_model` reads.
pub fn write_model(model: &GeometricModel) -> String {
    let mut out = String::new();
    for j in &model.joints {
        out.push_str(&format!(
            "joint {} {} {} {} {}\n",
            j.axis[0], j.axis[1], j.axis[2], j.limits[0], j.limits[1]
        ));
    }
    for l in &model.links {
        out.push_str(&format!(
            "link {} {} {} {} {}\n",
            l.length, l.mass, l.com[0], l.com[1], l.com[2]
        ));
    }
    for r in &model.routes {
        out.push_str("route");
        for p in &r.points {
            out.push_str(&format!(" {}:{},{},{}", p.link, p.offset[0], p.offset[1], p.offset[2]));
        }
        out.push('\n');
    }
    let e = &model.elongation;
    out.push_str(&format!("elongation {} {} {}\n", e.k_d, e.a, e.b));
    out
}
