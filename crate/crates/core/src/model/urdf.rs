//! URDF-subset reader and canonical writer.
//!
//! Supported joint types: `revolute`, `continuous`, `fixed`. `prismatic`,
//! `floating` and `planar` are rejected explicitly — the floating base is
//! implicit at the root link, never a URDF joint. `visual`, `collision` and
//! `inertial` elements are ignored.

use super::{
    JointKind, JointSpec, KinematicModel, ModelBuilder, ModelError, AXIS_NORM_TOL,
};
use nalgebra::Vector3;

/// Parses a URDF document into a validated kinematic tree.
pub fn parse_urdf(text: &str) -> Result<KinematicModel, ModelError> {
    let doc = roxmltree::Document::parse(text)
        .map_err(|e| ModelError::MalformedXml(e.to_string()))?;
    let robot = doc.root_element();
    if robot.tag_name().name() != "robot" {
        return Err(ModelError::MalformedXml(format!(
            "root element is '{}', expected 'robot'",
            robot.tag_name().name()
        )));
    }

    let mut builder = ModelBuilder::new(robot.attribute("name").unwrap_or(""));

    for node in robot.children().filter(|n| n.is_element()) {
        match node.tag_name().name() {
            "link" => {
                let name = node
                    .attribute("name")
                    .ok_or_else(|| ModelError::MalformedXml("link without name".into()))?;
                builder = builder.link(name);
            }
            "joint" => {
                builder = builder.joint(parse_joint(&node)?);
            }
            // Anything else at robot level (material, gazebo, ...) is ignored.
            _ => {}
        }
    }

    builder.build()
}

fn parse_joint(node: &roxmltree::Node) -> Result<JointSpec, ModelError> {
    let name = node
        .attribute("name")
        .ok_or_else(|| ModelError::MalformedXml("joint without name".into()))?
        .to_string();
    let kind = match node.attribute("type") {
        Some("revolute") => JointKind::Revolute,
        Some("continuous") => JointKind::Continuous,
        Some("fixed") => JointKind::Fixed,
        Some(other) => {
            return Err(ModelError::UnknownJointType {
                joint: name,
                kind: other.to_string(),
            })
        }
        None => {
            return Err(ModelError::MalformedXml(format!(
                "joint '{name}' without type"
            )))
        }
    };

    let child_element = |tag: &str| {
        node.children()
            .find(|n| n.is_element() && n.tag_name().name() == tag)
    };
    let link_ref = |tag: &str| -> Result<String, ModelError> {
        let el = child_element(tag).ok_or_else(|| {
            ModelError::MalformedXml(format!("joint '{name}' without <{tag}> element"))
        })?;
        el.attribute("link")
            .map(str::to_string)
            .ok_or_else(|| {
                ModelError::MalformedXml(format!(
                    "joint '{name}': <{tag}> without link attribute"
                ))
            })
    };

    let parent = link_ref("parent")?;
    let child = link_ref("child")?;

    let (origin_xyz, origin_rpy) = match child_element("origin") {
        Some(el) => (
            parse_triple(el.attribute("xyz"), &name, "origin xyz")?,
            parse_triple(el.attribute("rpy"), &name, "origin rpy")?,
        ),
        None => (Vector3::zeros(), Vector3::zeros()),
    };

    // The axis is meaningful only for movable joints; the URDF default is
    // (1, 0, 0). Slightly off-unit axes are normalized once — an axis that is
    // already unit to 1e-9 is kept bit-for-bit so the canonical serialization
    // re-parses to an identical model.
    let axis = if kind.is_movable() {
        let raw = match child_element("axis") {
            Some(el) => parse_triple(el.attribute("xyz"), &name, "axis xyz")?,
            None => Vector3::x(),
        };
        let norm = raw.norm();
        if (norm - 1.0).abs() <= 1e-9 {
            raw
        } else if (norm - 1.0).abs() <= AXIS_NORM_TOL {
            raw / norm
        } else {
            return Err(ModelError::BadAxis { joint: name, norm });
        }
    } else {
        Vector3::x()
    };

    let limit = child_element("limit");
    let mut limits = None;
    let mut vel_max = None;
    if let Some(el) = limit {
        if kind == JointKind::Revolute {
            // URDF defaults lower/upper to 0 when the attribute is absent;
            // validate_model flags the resulting degenerate range.
            limits = Some(super::JointLimits {
                pos_min: parse_scalar(el.attribute("lower"), &name, "lower")?.unwrap_or(0.0),
                pos_max: parse_scalar(el.attribute("upper"), &name, "upper")?.unwrap_or(0.0),
            });
        }
        vel_max = parse_scalar(el.attribute("velocity"), &name, "velocity")?;
    } else if kind == JointKind::Revolute {
        return Err(ModelError::MissingLimit { joint: name });
    }

    Ok(JointSpec {
        name,
        kind,
        parent,
        child,
        axis,
        origin_xyz,
        origin_rpy,
        limits,
        vel_max,
    })
}

fn parse_scalar(
    attr: Option<&str>,
    joint: &str,
    what: &str,
) -> Result<Option<f64>, ModelError> {
    attr.map(|s| {
        s.trim().parse::<f64>().map_err(|_| {
            ModelError::MalformedXml(format!("joint '{joint}': bad {what} value '{s}'"))
        })
    })
    .transpose()
}

fn parse_triple(
    attr: Option<&str>,
    joint: &str,
    what: &str,
) -> Result<Vector3<f64>, ModelError> {
    let Some(s) = attr else {
        return Ok(Vector3::zeros());
    };
    let parts: Vec<&str> = s.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(ModelError::MalformedXml(format!(
            "joint '{joint}': {what} needs 3 values, got '{s}'"
        )));
    }
    let mut v = Vector3::zeros();
    for (i, p) in parts.iter().enumerate() {
        v[i] = p.parse::<f64>().map_err(|_| {
            ModelError::MalformedXml(format!("joint '{joint}': bad {what} value '{p}'"))
        })?;
    }
    Ok(v)
}

/// Writes a model as deterministic URDF: document-order links and joints,
/// alphabetically sorted attributes and child elements, shortest float
/// representation that parses back to the same bits. Re-parsing the output
/// yields a model identical to the input.
pub fn serialize_urdf(model: &KinematicModel) -> String {
    let mut out = String::new();
    out.push_str(&format!("<robot name=\"{}\">\n", escape(&model.name)));
    for link in model.links() {
        out.push_str(&format!("  <link name=\"{}\"/>\n", escape(&link.name)));
    }
    for joint in model.joints() {
        let kind = match joint.kind {
            JointKind::Revolute => "revolute",
            JointKind::Continuous => "continuous",
            JointKind::Fixed => "fixed",
        };
        out.push_str(&format!(
            "  <joint name=\"{}\" type=\"{kind}\">\n",
            escape(&joint.name)
        ));
        // Child elements in alphabetical order: axis, child, limit, origin, parent.
        if joint.kind.is_movable() {
            out.push_str(&format!("    <axis xyz=\"{}\"/>\n", triple(&joint.axis)));
        }
        out.push_str(&format!(
            "    <child link=\"{}\"/>\n",
            escape(model.link_name(joint.child_link))
        ));
        // The limit element is omitted when it would only restate defaults,
        // so defaulted velocity limits stay defaulted after a round trip.
        let mut limit_attrs = Vec::new();
        if let Some(l) = &joint.limits {
            limit_attrs.push(format!("lower=\"{}\"", fmt_f64(l.pos_min)));
            limit_attrs.push(format!("upper=\"{}\"", fmt_f64(l.pos_max)));
        }
        if joint.kind.is_movable() && !joint.vel_max_defaulted {
            limit_attrs.push(format!("velocity=\"{}\"", fmt_f64(joint.vel_max)));
        }
        if !limit_attrs.is_empty() {
            out.push_str(&format!("    <limit {}/>\n", limit_attrs.join(" ")));
        }
        out.push_str(&format!(
            "    <origin rpy=\"{}\" xyz=\"{}\"/>\n",
            triple(&joint.origin_rpy),
            triple(&joint.origin_xyz)
        ));
        out.push_str(&format!(
            "    <parent link=\"{}\"/>\n",
            escape(model.link_name(joint.parent_link))
        ));
        out.push_str("  </joint>\n");
    }
    out.push_str("</robot>\n");
    out
}

/// Shortest decimal string that parses back to exactly `x`.
fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

fn triple(v: &Vector3<f64>) -> String {
    format!("{} {} {}", fmt_f64(v.x), fmt_f64(v.y), fmt_f64(v.z))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const MINIMAL: &str = r#"
        <robot name="minimal">
          <link name="base"/>
          <link name="arm"/>
          <joint name="shoulder" type="revolute">
            <parent link="base"/>
            <child link="arm"/>
            <axis xyz="0 0 1"/>
            <limit lower="-2.0" upper="2.0" velocity="5.0"/>
          </joint>
        </robot>
    "#;

    #[test]
    fn minimal_document_parses() {
        let m = parse_urdf(MINIMAL).unwrap();
        assert_eq!(m.name, "minimal");
        assert_eq!(m.n_dof(), 1);
        assert_eq!(m.dof_order(), ["shoulder"]);
        let j = m.dof_joint(0);
        assert_eq!(j.axis, Vector3::z());
        assert_eq!(j.limits.unwrap().pos_min, -2.0);
        assert_eq!(j.limits.unwrap().pos_max, 2.0);
        assert_eq!(j.vel_max, 5.0);
        assert!(!j.vel_max_defaulted);
        assert_eq!(m.root_link().name, "base");
    }

    #[test]
    fn undeclared_child_link_errors() {
        let text = r#"
            <robot name="bad">
              <link name="base"/>
              <joint name="j" type="revolute">
                <parent link="base"/>
                <child link="ghost"/>
                <limit lower="-1" upper="1"/>
              </joint>
            </robot>
        "#;
        assert!(matches!(
            parse_urdf(text).unwrap_err(),
            ModelError::ModelInconsistent(_)
        ));
    }

    #[test]
    fn prismatic_rejected() {
        let text = r#"
            <robot name="bad">
              <link name="a"/><link name="b"/>
              <joint name="slider" type="prismatic">
                <parent link="a"/><child link="b"/>
                <limit lower="0" upper="1" velocity="1"/>
              </joint>
            </robot>
        "#;
        assert_eq!(
            parse_urdf(text).unwrap_err(),
            ModelError::UnknownJointType {
                joint: "slider".into(),
                kind: "prismatic".into()
            }
        );
    }

    #[test]
    fn floating_rejected() {
        let text = r#"
            <robot name="bad">
              <link name="a"/><link name="b"/>
              <joint name="f" type="floating">
                <parent link="a"/><child link="b"/>
              </joint>
            </robot>
        "#;
        assert!(matches!(
            parse_urdf(text).unwrap_err(),
            ModelError::UnknownJointType { .. }
        ));
    }

    #[test]
    fn revolute_without_limit_errors() {
        let text = r#"
            <robot name="bad">
              <link name="a"/><link name="b"/>
              <joint name="j" type="revolute">
                <parent link="a"/><child link="b"/>
              </joint>
            </robot>
        "#;
        assert_eq!(
            parse_urdf(text).unwrap_err(),
            ModelError::MissingLimit { joint: "j".into() }
        );
    }

    #[test]
    fn origin_defaults_to_identity() {
        let m = parse_urdf(MINIMAL).unwrap();
        let j = m.dof_joint(0);
        assert_eq!(j.origin_xyz, Vector3::zeros());
        assert_eq!(j.origin_rpy, Vector3::zeros());
        assert_eq!(j.origin_rotation().matrix(), &nalgebra::Matrix3::identity());
    }

    #[test]
    fn visual_collision_inertial_ignored() {
        let text = r#"
            <robot name="decorated">
              <link name="base">
                <visual><geometry><box size="1 1 1"/></geometry></visual>
                <inertial><mass value="1.0"/></inertial>
              </link>
              <link name="arm">
                <collision><geometry><sphere radius="0.1"/></geometry></collision>
              </link>
              <joint name="j" type="continuous">
                <parent link="base"/><child link="arm"/>
                <axis xyz="0 1 0"/>
              </joint>
            </robot>
        "#;
        let m = parse_urdf(text).unwrap();
        assert_eq!(m.n_dof(), 1);
    }

    #[test]
    fn continuous_joint_has_no_position_bounds() {
        let text = r#"
            <robot name="spin">
              <link name="a"/><link name="b"/>
              <joint name="wheel" type="continuous">
                <parent link="a"/><child link="b"/>
                <axis xyz="0 0 1"/>
              </joint>
            </robot>
        "#;
        let m = parse_urdf(text).unwrap();
        let j = m.dof_joint(0);
        assert!(j.limits.is_none());
        assert_eq!(j.vel_max, super::super::DEFAULT_VEL_MAX);
        assert!(j.vel_max_defaulted);
    }

    #[test]
    fn continuous_joint_velocity_limit_honored() {
        let text = r#"
            <robot name="spin">
              <link name="a"/><link name="b"/>
              <joint name="wheel" type="continuous">
                <parent link="a"/><child link="b"/>
                <axis xyz="0 0 1"/>
                <limit velocity="3.5"/>
              </joint>
            </robot>
        "#;
        let j = parse_urdf(text).unwrap().dof_joint(0).clone();
        assert_eq!(j.vel_max, 3.5);
        assert!(!j.vel_max_defaulted);
    }

    #[test]
    fn axis_defaults_to_x() {
        let text = r#"
            <robot name="m">
              <link name="a"/><link name="b"/>
              <joint name="j" type="revolute">
                <parent link="a"/><child link="b"/>
                <limit lower="-1" upper="1" velocity="1"/>
              </joint>
            </robot>
        "#;
        assert_eq!(parse_urdf(text).unwrap().dof_joint(0).axis, Vector3::x());
    }

    #[test]
    fn slightly_off_unit_axis_normalized() {
        let text = r#"
            <robot name="m">
              <link name="a"/><link name="b"/>
              <joint name="j" type="revolute">
                <parent link="a"/><child link="b"/>
                <axis xyz="0 0 1.0005"/>
                <limit lower="-1" upper="1" velocity="1"/>
              </joint>
            </robot>
        "#;
        let axis = parse_urdf(text).unwrap().dof_joint(0).axis;
        assert_relative_eq!(axis.norm(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(axis.z, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn far_off_unit_axis_rejected() {
        let text = r#"
            <robot name="m">
              <link name="a"/><link name="b"/>
              <joint name="j" type="revolute">
                <parent link="a"/><child link="b"/>
                <axis xyz="0 0 2"/>
                <limit lower="-1" upper="1" velocity="1"/>
              </joint>
            </robot>
        "#;
        assert!(matches!(
            parse_urdf(text).unwrap_err(),
            ModelError::BadAxis { norm, .. } if norm == 2.0
        ));
    }

    #[test]
    fn malformed_xml_errors() {
        assert!(matches!(
            parse_urdf("<robot name='x'><link").unwrap_err(),
            ModelError::MalformedXml(_)
        ));
        assert!(matches!(
            parse_urdf("<not_a_robot/>").unwrap_err(),
            ModelError::MalformedXml(_)
        ));
    }

    #[test]
    fn duplicate_joint_name_rejected() {
        let text = r#"
            <robot name="bad">
              <link name="a"/><link name="b"/><link name="c"/>
              <joint name="j" type="fixed"><parent link="a"/><child link="b"/></joint>
              <joint name="j" type="fixed"><parent link="a"/><child link="c"/></joint>
            </robot>
        "#;
        assert_eq!(
            parse_urdf(text).unwrap_err(),
            ModelError::DuplicateName { name: "j".into() }
        );
    }

    #[test]
    fn cycle_in_document_rejected() {
        let text = r#"
            <robot name="loop">
              <link name="a"/><link name="b"/>
              <joint name="j1" type="fixed"><parent link="a"/><child link="b"/></joint>
              <joint name="j2" type="fixed"><parent link="b"/><child link="a"/></joint>
            </robot>
        "#;
        assert!(matches!(
            parse_urdf(text).unwrap_err(),
            ModelError::CycleDetected { .. } | ModelError::ModelInconsistent(_)
        ));
    }

    #[test]
    fn serialize_parse_fixpoint() {
        // Awkward values on purpose: denormal-ish decimals, negative zero
        // components, defaulted and explicit velocity limits, fixed joints.
        let text = r#"
            <robot name="fix">
              <link name="base"/>
              <link name="torso"/>
              <link name="arm"/>
              <link name="hand"/>
              <joint name="waist" type="revolute">
                <parent link="base"/><child link="torso"/>
                <axis xyz="0 0.7071067811865476 0.7071067811865475"/>
                <origin rpy="0.1 -0.2 0.30000000000000004" xyz="0 0.333333333333333314 -0.1"/>
                <limit lower="-1.5707963267948966" upper="1.5707963267948966" velocity="2.5"/>
              </joint>
              <joint name="shoulder" type="continuous">
                <parent link="torso"/><child link="arm"/>
                <axis xyz="1 0 0"/>
                <origin xyz="0 0 0.5"/>
              </joint>
              <joint name="wrist" type="fixed">
                <parent link="arm"/><child link="hand"/>
                <origin rpy="0 0 1.2" xyz="0.25 0 0"/>
              </joint>
            </robot>
        "#;
        let first = parse_urdf(text).unwrap();
        let canon = serialize_urdf(&first);
        let second = parse_urdf(&canon).unwrap();
        assert_eq!(first, second);
        // Canonical form is itself a fixpoint of serialization.
        assert_eq!(canon, serialize_urdf(&second));
    }

    #[test]
    fn fixpoint_preserves_defaulted_velocity() {
        let text = r#"
            <robot name="d">
              <link name="a"/><link name="b"/>
              <joint name="j" type="revolute">
                <parent link="a"/><child link="b"/>
                <limit lower="-1" upper="1"/>
              </joint>
            </robot>
        "#;
        let first = parse_urdf(text).unwrap();
        assert!(first.dof_joint(0).vel_max_defaulted);
        let second = parse_urdf(&serialize_urdf(&first)).unwrap();
        assert_eq!(first, second);
    }
}
