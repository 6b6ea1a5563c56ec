import numpy as np
import pytest

from reachlab.model import FORMAT_HEADER, ModelError, load_model, parse_model

CHAIN = f"""format: {FORMAT_HEADER}
name: two
home_pose: [0.0, 0.0]
joints:
  - name: a
    parent: base
    axis: [0, 0, 1]
    limits: {{lower: -1, upper: 1, velocity: 1}}
    link: {{mass: 1.0, com: [0.5, 0, 0]}}
  - name: b
    parent: a
    origin: {{xyz: [1, 0, 0]}}
    axis: [0, 0, 1]
    limits: {{lower: -1, upper: 1, velocity: 1}}
    link: {{mass: 1.0, com: [0.5, 0, 0]}}
end_effector: {{link: b, offset: [1, 0, 0]}}
collision_spheres:
  - {{link: b, offset: [0.5, 0, 0], radius: 0.1}}
"""


def test_parse_minimal_chain():
    m = parse_model(CHAIN)
    assert m.n == 2
    assert m.joint_names == ("a", "b")
    assert m.ee_link == 1
    np.testing.assert_allclose(m.sphere_radii, [0.1])
    assert m.reach() == pytest.approx(2.0)


def test_joint_order_follows_parents_not_file_order():
    lines = CHAIN.split("  - name: b")
    swapped = lines[0].split("joints:\n")[0] + "joints:\n  - name: b" + lines[1].split("end_effector")[0] \
        + lines[0].split("joints:\n")[1] + "end_effector" + lines[1].split("end_effector")[1]
    assert parse_model(swapped).joint_names == ("a", "b")


@pytest.mark.parametrize("old,new,message", [
    (f"format: {FORMAT_HEADER}", "format: something-else", "first line"),
    ("mass: 1.0, com: [0.5, 0, 0]}}\n  - name: b", "mass: 0.0, com: [0.5, 0, 0]}}\n  - name: b", "mass"),
    ("lower: -1, upper: 1, velocity: 1}}\n    link: {{mass: 1.0, com: [0.5, 0, 0]}}\n  - name: b",
     "lower: 1, upper: -1, velocity: 1}}\n    link: {{mass: 1.0, com: [0.5, 0, 0]}}\n  - name: b", "lower limit"),
    ("parent: a", "parent: nowhere", "unknown parent"),
    ("radius: 0.1", "radius: -0.1", "radius"),
    ("link: b, offset: [1, 0, 0]", "link: zz, offset: [1, 0, 0]", "end effector"),
])
def test_invalid_models_are_rejected(old, new, message):
    text = CHAIN.replace(old.replace("{{", "{").replace("}}", "}"), new.replace("{{", "{").replace("}}", "}"))
    assert text != CHAIN
    with pytest.raises(ModelError, match=message):
        parse_model(text)


def test_branching_tree_rejected():
    extra = """  - name: c
    parent: a
    axis: [0, 0, 1]
    limits: {lower: -1, upper: 1, velocity: 1}
    link: {mass: 1.0}
end_effector"""
    with pytest.raises(ModelError, match="chain"):
        parse_model(CHAIN.replace("end_effector", extra, 1))


def test_asymmetric_inertia_rejected():
    text = CHAIN.replace("  - name: b\n    parent: a\n    origin: {xyz: [1, 0, 0]}\n    axis: [0, 0, 1]\n    limits: {lower: -1, upper: 1, velocity: 1}\n    link: {mass: 1.0, com: [0.5, 0, 0]}",
                         "  - name: b\n    parent: a\n    origin: {xyz: [1, 0, 0]}\n    axis: [0, 0, 1]\n    limits: {lower: -1, upper: 1, velocity: 1}\n    link: {mass: 1.0, inertia: [[1, 0.5, 0], [0, 1, 0], [0, 0, 1]]}")
    with pytest.raises(ModelError, match="symmetric"):
        parse_model(text)


@pytest.mark.parametrize("name,n", [("planar2", 2), ("spatial6", 6)])
def test_bundled_models_load(name, n):
    m = load_model(name)
    assert m.n == n
    assert np.all(m.q_lower < m.q_upper)
    assert np.all((m.home_pose >= m.q_lower) & (m.home_pose <= m.q_upper))


def test_unknown_model_name():
    with pytest.raises(ModelError):
        load_model("no-such-arm")


def test_load_from_path(tmp_path):
    p = tmp_path / "arm.yaml"
    p.write_text(CHAIN)
    assert load_model(p).name == "two"


def test_clamp(planar2):
    q = planar2.clamp(np.array([10.0, -10.0]))
    np.testing.assert_allclose(q, [planar2.q_upper[0], planar2.q_lower[1]])
