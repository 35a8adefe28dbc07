//! Synthetic worlds of rectangular objects seen by agents with limited,
//! occluded sensing.

use std::io::{Read, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::fusion::AffinePose;
use crate::perception::{BoxCells, DetectionTruth, FEATURE_STRIDE};
use crate::tensorcore::{seeded_rng, Tensor};

/// Placement attempts per object before giving up.
pub const PLACEMENT_RETRIES: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub world_h: usize,
    pub world_w: usize,
    pub n_agents: usize,
    pub n_objects: usize,
    pub obj_min: usize,
    pub obj_max: usize,
    pub radius: f64,
    pub occlusion: bool,
    /// Minimum empty cells between objects, so distinct objects never touch
    /// on the feature grid.
    pub min_gap: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            world_h: 256,
            world_w: 256,
            n_agents: 3,
            n_objects: 12,
            obj_min: 6,
            obj_max: 14,
            radius: 90.0,
            occlusion: true,
            min_gap: 3,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self, levels: usize) -> Result<()> {
        let m = 1usize << (levels + 1);
        if self.world_h == 0 || self.world_w == 0 || self.world_h % m != 0 || self.world_w % m != 0 {
            return Err(Error::config(format!(
                "world {}x{} must be a positive multiple of {m} for {levels} DWT level(s)",
                self.world_h, self.world_w
            )));
        }
        if self.n_agents == 0 || self.n_agents > u16::MAX as usize {
            return Err(Error::config("need at least one agent"));
        }
        if self.n_objects > 255 {
            return Err(Error::config("at most 255 objects"));
        }
        if self.obj_min == 0 || self.obj_min > self.obj_max || self.obj_max > self.world_h.min(self.world_w) {
            return Err(Error::config(format!("bad object size range {}..={}", self.obj_min, self.obj_max)));
        }
        if !(self.radius.is_finite() && self.radius >= 0.0) {
            return Err(Error::config("sensing radius must be finite and >= 0"));
        }
        Ok(())
    }
}

/// World grid of object labels: `0` empty, `k + 1` for object `k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct World {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

impl World {
    pub fn label(&self, x: i64, y: i64) -> u8 {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            0
        } else {
            self.labels[y as usize * self.width + x as usize]
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Agent {
    pub id: u16,
    pub x: i64,
    pub y: i64,
}

/// A generated frame: world, objects and agents.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub world: World,
    pub objects: Vec<BoxCells>,
    pub agents: Vec<Agent>,
}

fn boxes_clear(a: &BoxCells, b: &BoxCells, gap: i64) -> bool {
    a.x1() + gap <= b.x0 || b.x1() + gap <= a.x0 || a.y1() + gap <= b.y0 || b.y1() + gap <= a.y0
}

/// Deterministic scenario for `cfg.seed`.
pub fn gen_scenario(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate(0)?;
    let mut rng = seeded_rng(cfg.seed);
    let (h, w) = (cfg.world_h as i64, cfg.world_w as i64);
    let gap = cfg.min_gap as i64;
    let mut objects: Vec<BoxCells> = Vec::with_capacity(cfg.n_objects);
    for k in 0..cfg.n_objects {
        let mut placed = false;
        for _ in 0..PLACEMENT_RETRIES {
            let bw = rng.gen_range(cfg.obj_min..=cfg.obj_max) as i64;
            let bh = rng.gen_range(cfg.obj_min..=cfg.obj_max) as i64;
            let cand = BoxCells::new(rng.gen_range(0..=w - bw), rng.gen_range(0..=h - bh), bw, bh);
            if objects.iter().all(|o| boxes_clear(o, &cand, gap)) {
                objects.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Placement(format!(
                "could not place object {k} of {} after {PLACEMENT_RETRIES} attempts",
                cfg.n_objects
            )));
        }
    }
    let mut labels = vec![0u8; cfg.world_h * cfg.world_w];
    for (k, o) in objects.iter().enumerate() {
        for y in o.y0..o.y1() {
            for x in o.x0..o.x1() {
                labels[(y * w + x) as usize] = k as u8 + 1;
            }
        }
    }
    let world = World { height: cfg.world_h, width: cfg.world_w, labels };
    let mut agents = Vec::with_capacity(cfg.n_agents);
    for id in 0..cfg.n_agents {
        let mut found = None;
        for _ in 0..PLACEMENT_RETRIES {
            let (x, y) = (rng.gen_range(0..w), rng.gen_range(0..h));
            if world.label(x, y) == 0 {
                found = Some(Agent { id: id as u16, x, y });
                break;
            }
        }
        agents.push(found.ok_or_else(|| Error::Placement(format!("no free cell for agent {id}")))?);
    }
    Ok(Scenario { config: cfg.clone(), world, objects, agents })
}

/// Cells strictly between `(x0, y0)` and `(x1, y1)` on a Bresenham line.
fn line_interior(x0: i64, y0: i64, x1: i64, y1: i64, mut f: impl FnMut(i64, i64) -> bool) -> bool {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x == x1 && y == y1 {
            return true;
        }
        if !(x == x0 && y == y0) && !f(x, y) {
            return false;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

impl Scenario {
    /// Whether agent `a` sees world cell `(x, y)`: inside the sensing disc
    /// and, with occlusion on, no other object on the line of sight.
    pub fn visible(&self, a: &Agent, x: i64, y: i64) -> bool {
        let (dx, dy) = ((x - a.x) as f64, (y - a.y) as f64);
        if dx * dx + dy * dy > self.config.radius * self.config.radius {
            return false;
        }
        let target = self.world.label(x, y);
        if !self.config.occlusion || target == 0 {
            return true;
        }
        line_interior(a.x, a.y, x, y, |cx, cy| {
            let l = self.world.label(cx, cy);
            l == 0 || l == target
        })
    }

    /// World-frame offset of agent `a`'s local grid: local `(x, y)` is world
    /// `(x + ox, y + oy)`. Offsets are multiples of the feature stride and
    /// roughly center the agent.
    pub fn frame_offset(&self, a: &Agent) -> (i64, i64) {
        let s = FEATURE_STRIDE as i64;
        let ox = (a.x - self.world.width as i64 / 2).div_euclid(s) * s;
        let oy = (a.y - self.world.height as i64 / 2).div_euclid(s) * s;
        (ox, oy)
    }

    /// Occupancy as seen by agent `a`, in its local frame (`1 x H x W`).
    pub fn render_local_view(&self, a: &Agent) -> Tensor {
        let (h, w) = (self.world.height, self.world.width);
        let (ox, oy) = self.frame_offset(a);
        let mut t = Tensor::zeros(&[1, h, w]);
        let data = t.data_mut();
        for ly in 0..h as i64 {
            for lx in 0..w as i64 {
                let (x, y) = (lx + ox, ly + oy);
                if self.world.label(x, y) != 0 && self.visible(a, x, y) {
                    data[(ly * w as i64 + lx) as usize] = 1.0;
                }
            }
        }
        t
    }

    /// Translation from agent `from`'s feature grid to agent `to`'s.
    pub fn feature_pose(&self, from: &Agent, to: &Agent) -> AffinePose {
        let (fx, fy) = self.frame_offset(from);
        let (tx, ty) = self.frame_offset(to);
        let s = FEATURE_STRIDE as f64;
        AffinePose::translation((fx - tx) as f64 / s, (fy - ty) as f64 / s)
    }

    /// Objects inside agent `a`'s grid, clipped to it.
    pub fn truth_for(&self, a: &Agent) -> DetectionTruth {
        let (ox, oy) = self.frame_offset(a);
        let (h, w) = (self.world.height, self.world.width);
        let boxes = self
            .objects
            .iter()
            .filter_map(|b| b.translated(-ox, -oy).clipped(w as i64, h as i64))
            .collect();
        DetectionTruth { height: h, width: w, boxes }
    }

    pub fn ego(&self) -> &Agent {
        &self.agents[0]
    }
}

pub const WSCN_MAGIC: &[u8; 4] = b"WSCN";
pub const WSCN_VERSION: u16 = 1;

/// Writes the `.wscn` dump: magic, version, config, label grid, then agent
/// positions.
pub fn write_scenario<W: Write>(mut out: W, s: &Scenario) -> Result<()> {
    let c = &s.config;
    out.write_all(WSCN_MAGIC)?;
    out.write_all(&WSCN_VERSION.to_le_bytes())?;
    for v in [c.world_h, c.world_w, c.n_agents, c.n_objects, c.obj_min, c.obj_max, c.min_gap] {
        out.write_all(&(v as u32).to_le_bytes())?;
    }
    out.write_all(&c.radius.to_le_bytes())?;
    out.write_all(&[c.occlusion as u8])?;
    out.write_all(&c.seed.to_le_bytes())?;
    out.write_all(&s.world.labels)?;
    for a in &s.agents {
        out.write_all(&(a.x as i32).to_le_bytes())?;
        out.write_all(&(a.y as i32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_scenario<R: Read>(mut input: R) -> Result<Scenario> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = buf.get(pos..pos + n).ok_or_else(|| Error::Format("truncated scenario file".into()))?;
        pos += n;
        Ok(s)
    };
    if take(4)? != WSCN_MAGIC {
        return Err(Error::Format("not a scenario file (bad magic)".into()));
    }
    let version = u16::from_le_bytes(take(2)?.try_into().expect("2 bytes"));
    if version != WSCN_VERSION {
        return Err(Error::Format(format!("unsupported scenario version {version}")));
    }
    let mut u = [0usize; 7];
    for v in &mut u {
        *v = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
    }
    let radius = f64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
    let occlusion = take(1)?[0] != 0;
    let seed = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
    let config = ScenarioConfig {
        world_h: u[0],
        world_w: u[1],
        n_agents: u[2],
        n_objects: u[3],
        obj_min: u[4],
        obj_max: u[5],
        min_gap: u[6],
        radius,
        occlusion,
        seed,
    };
    config.validate(0)?;
    let labels = take(config.world_h * config.world_w)?.to_vec();
    let mut agents = Vec::with_capacity(config.n_agents);
    for id in 0..config.n_agents {
        let x = i32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as i64;
        let y = i32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as i64;
        agents.push(Agent { id: id as u16, x, y });
    }
    let world = World { height: config.world_h, width: config.world_w, labels };
    let objects = objects_from_labels(&world, config.n_objects)?;
    Ok(Scenario { config, world, objects, agents })
}

fn objects_from_labels(world: &World, n: usize) -> Result<Vec<BoxCells>> {
    let mut ext = vec![(i64::MAX, i64::MAX, i64::MIN, i64::MIN); n];
    for (i, &l) in world.labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let k = l as usize - 1;
        let e = ext.get_mut(k).ok_or_else(|| Error::Format(format!("label {l} exceeds object count")))?;
        let (x, y) = ((i % world.width) as i64, (i / world.width) as i64);
        *e = (e.0.min(x), e.1.min(y), e.2.max(x), e.3.max(y));
    }
    ext.into_iter()
        .enumerate()
        .map(|(k, (x0, y0, x1, y1))| {
            if x0 > x1 {
                Err(Error::Format(format!("object {k} missing from grid")))
            } else {
                Ok(BoxCells::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1))
            }
        })
        .collect()
}
