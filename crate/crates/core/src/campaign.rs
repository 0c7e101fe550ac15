//! SMS reminder campaigns: the per-SMS compliance update, allocation tensors,
//! the budget ledger, and per-round dispatch into groups.
//!
//! Dispatch only ever sees group membership and eligibility. Recipients are
//! drawn uniformly inside a cell, so nothing here reads an individual's μ or
//! ρ except [`apply_sms`] on the chosen recipient.

use std::io::{Read, Write};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, SimError};
use crate::policy::PolicySpec;
use crate::population::{
    ClinicalStatus, GroupKey, Individual, PopulationState, NUM_AGE_BUCKETS, NUM_GENDERS, NUM_GROUPS,
    NUM_SES,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub c1: f64,
    pub c2: f64,
    /// Dollars per SMS.
    pub sms_cost: f64,
    /// Total budget in dollars.
    pub budget: f64,
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.sms_cost > 0.0 && self.sms_cost.is_finite()) {
            return Err(ConfigError::range("campaign.sms_cost", self.sms_cost, "> 0"));
        }
        if !(self.budget >= 0.0 && self.budget.is_finite()) {
            return Err(ConfigError::range("campaign.budget", self.budget, ">= 0"));
        }
        if !self.c1.is_finite() || !self.c2.is_finite() {
            return Err(ConfigError::Invalid("campaign.c1/c2 must be finite".into()));
        }
        Ok(())
    }

    /// Whole SMSs the budget pays for.
    pub fn sms_budget(&self) -> u64 {
        whole_sms(self.budget / self.sms_cost)
    }

    /// Whole SMSs a budget fraction pays for.
    pub fn sms_for_fraction(&self, fraction: f64) -> u64 {
        whole_sms(fraction * self.budget / self.sms_cost)
    }
}

/// Floors a real SMS count, absorbing representation error such as
/// 49 / 0.049 evaluating a hair under 1000.
fn whole_sms(x: f64) -> u64 {
    if x <= 0.0 || !x.is_finite() {
        return 0;
    }
    (x * (1.0 + 1e-12)).floor() as u64
}

/// Compliance increment for the `n`-th SMS. The first SMS has no previous
/// count, so its increment is the base effect `ρ·c1`.
#[inline]
pub fn sms_increment(n: u32, rho: f64, c1: f64, c2: f64) -> f64 {
    if n <= 1 {
        rho * c1
    } else {
        let n = n as f64;
        rho * (c1 + c2 * (n / (n - 1.0)).log10())
    }
}

/// Delivers one SMS: bumps the count and raises μ, clamped to `[0, 1]`.
#[inline]
pub fn apply_sms(ind: &mut Individual, cfg: &CampaignConfig) {
    ind.sms_count += 1;
    let delta = sms_increment(ind.sms_count, ind.rho, cfg.c1, cfg.c2);
    ind.mu = (ind.mu + delta).clamp(0.0, 1.0);
}

/// Who may receive a reminder: screened-age healthy individuals and anyone
/// recovered.
#[inline]
pub fn sms_eligible(alpha: ClinicalStatus, age: u32, policy: &PolicySpec) -> bool {
    policy.covers(alpha, age)
}

/// Which socio-demographic axes a campaign resolves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SocioGrid {
    pub split_age: bool,
    pub split_gender: bool,
    pub split_ses: bool,
}

impl Default for SocioGrid {
    fn default() -> Self {
        SocioGrid {
            split_age: true,
            split_gender: true,
            split_ses: true,
        }
    }
}

impl SocioGrid {
    pub fn collapsed() -> Self {
        SocioGrid {
            split_age: false,
            split_gender: false,
            split_ses: false,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        [
            if self.split_age { NUM_AGE_BUCKETS } else { 1 },
            if self.split_gender { NUM_GENDERS } else { 1 },
            if self.split_ses { NUM_SES } else { 1 },
        ]
    }

    #[inline]
    pub fn cell_of(&self, group: GroupKey) -> usize {
        let [_, g, s] = self.dims();
        let a_i = if self.split_age { group.age_bucket as usize } else { 0 };
        let g_i = if self.split_gender { group.gender.index() } else { 0 };
        let s_i = if self.split_ses { group.ses as usize - 1 } else { 0 };
        (a_i * g + g_i) * s + s_i
    }
}

/// Clinical-status classes used by status-only campaigns: H and R1..R4, or a
/// single pooled class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusGrid {
    pub split_status: bool,
}

impl Default for StatusGrid {
    fn default() -> Self {
        StatusGrid { split_status: true }
    }
}

pub const STATUS_CLASSES: [ClinicalStatus; 5] = [
    ClinicalStatus::H,
    ClinicalStatus::R1,
    ClinicalStatus::R2,
    ClinicalStatus::R3,
    ClinicalStatus::R4,
];

impl StatusGrid {
    pub fn classes(&self) -> usize {
        if self.split_status {
            STATUS_CLASSES.len()
        } else {
            1
        }
    }

    #[inline]
    pub fn cell_of(&self, alpha: ClinicalStatus) -> usize {
        if !self.split_status {
            return 0;
        }
        match alpha {
            ClinicalStatus::H => 0,
            s => s.phase().map(|p| p.index() + 1).unwrap_or(0),
        }
    }
}

/// How tensor cells map onto eligible individuals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CellMap {
    Socio(SocioGrid),
    Status(StatusGrid),
}

impl CellMap {
    pub fn num_cells(&self) -> usize {
        match self {
            CellMap::Socio(g) => g.dims().iter().product(),
            CellMap::Status(s) => s.classes(),
        }
    }

    /// Sizes of the non-temporal axes.
    pub fn axes(&self) -> Vec<usize> {
        match self {
            CellMap::Socio(g) => g.dims().to_vec(),
            CellMap::Status(s) => vec![s.classes()],
        }
    }

    #[inline]
    pub fn cell_of(&self, alpha: ClinicalStatus, group: GroupKey) -> usize {
        match self {
            CellMap::Socio(g) => g.cell_of(group),
            CellMap::Status(s) => s.cell_of(alpha),
        }
    }
}

/// Eligible individual ids per cell. Reads status, age and group only.
pub fn eligible_by_cell(
    individuals: &[Individual],
    map: &CellMap,
    policy: &PolicySpec,
    out: &mut Vec<Vec<u32>>,
) {
    out.resize_with(map.num_cells(), Vec::new);
    for cell in out.iter_mut() {
        cell.clear();
    }
    for ind in individuals {
        if sms_eligible(ind.alpha, ind.age, policy) {
            out[map.cell_of(ind.alpha, ind.group)].push(ind.id);
        }
    }
}

/// Average yearly SMSs an individual of each group would receive under a
/// tensor, indexed `[gender][age_bucket][ses - 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmsHeatmap {
    pub values: [[[f64; NUM_SES]; NUM_AGE_BUCKETS]; NUM_GENDERS],
}

impl SmsHeatmap {
    /// Each cell's planned SMSs are shared among its groups in proportion to
    /// their eligible members in `individuals`, then divided by each group's
    /// alive population and by the horizon in years.
    pub fn compute(
        tensor: &CampaignTensor,
        cfg: &CampaignConfig,
        individuals: &[Individual],
        policy: &PolicySpec,
    ) -> Self {
        let cells = tensor.num_cells();
        let mut eligible = vec![[0u64; NUM_GROUPS]; cells];
        let mut cell_total = vec![0u64; cells];
        let mut alive = [0u64; NUM_GROUPS];
        for ind in individuals.iter().filter(|i| i.alpha.is_alive()) {
            alive[ind.group.index()] += 1;
            if sms_eligible(ind.alpha, ind.age, policy) {
                let c = tensor.cells.cell_of(ind.alpha, ind.group);
                eligible[c][ind.group.index()] += 1;
                cell_total[c] += 1;
            }
        }
        let years = tensor.horizon as f64 / crate::population::ROUNDS_PER_YEAR as f64;
        let quota = tensor.planned_sms_per_cell(cfg);
        let mut values = [[[0.0; NUM_SES]; NUM_AGE_BUCKETS]; NUM_GENDERS];
        for key in GroupKey::all() {
            let gi = key.index();
            if alive[gi] == 0 {
                continue;
            }
            let sms: f64 = (0..cells)
                .filter(|&c| cell_total[c] > 0)
                .map(|c| quota[c] as f64 * eligible[c][gi] as f64 / cell_total[c] as f64)
                .sum();
            values[key.gender.index()][key.age_bucket as usize][key.ses as usize - 1] =
                sms / alive[gi] as f64 / years;
        }
        SmsHeatmap { values }
    }

    /// Rows are age buckets, columns SES deciles.
    pub fn write_csv<W: Write>(&self, gender: crate::population::Gender, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["age_bucket".to_string()];
        header.extend((1..=NUM_SES).map(|s| format!("ses{s}")));
        out.write_record(&header)?;
        for (a, row) in self.values[gender.index()].iter().enumerate() {
            let mut rec = vec![a.to_string()];
            rec.extend(row.iter().map(f64::to_string));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Budget fractions over (time block × cell).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignTensor {
    pub cells: CellMap,
    /// Rounds covered by the tensor.
    pub horizon: u32,
    /// Rounds per time block; the last block absorbs the remainder.
    pub block_length: u32,
    values: Vec<f64>,
}

impl CampaignTensor {
    pub fn zeros(cells: CellMap, horizon: u32, block_length: u32) -> Self {
        let block_length = block_length.clamp(1, horizon.max(1));
        let nb = (horizon / block_length).max(1) as usize;
        CampaignTensor {
            cells,
            horizon,
            block_length,
            values: vec![0.0; nb * cells.num_cells()],
        }
    }

    /// Budget spread evenly over every block and cell.
    pub fn uniform(cells: CellMap, horizon: u32, block_length: u32) -> Self {
        let mut t = Self::zeros(cells, horizon, block_length);
        let v = 1.0 / t.values.len() as f64;
        t.values.iter_mut().for_each(|x| *x = v);
        t
    }

    pub fn from_values(
        cells: CellMap,
        horizon: u32,
        block_length: u32,
        values: Vec<f64>,
    ) -> Result<Self, SimError> {
        let mut t = Self::zeros(cells, horizon, block_length);
        if values.len() != t.values.len() {
            return Err(SimError::TensorShape(format!(
                "expected {} values, got {}",
                t.values.len(),
                values.len()
            )));
        }
        t.values = values;
        t.validate()?;
        Ok(t)
    }

    pub fn num_blocks(&self) -> usize {
        (self.horizon / self.block_length).max(1) as usize
    }

    pub fn num_cells(&self) -> usize {
        self.cells.num_cells()
    }

    /// Full shape: blocks followed by the cell axes.
    pub fn shape(&self) -> Vec<usize> {
        let mut s = vec![self.num_blocks()];
        s.extend(self.cells.axes());
        s
    }

    pub fn block_of(&self, offset: u32) -> usize {
        ((offset / self.block_length) as usize).min(self.num_blocks() - 1)
    }

    /// First round offset and length of a block.
    pub fn block_span(&self, block: usize) -> (u32, u32) {
        let start = block as u32 * self.block_length;
        let len = if block + 1 == self.num_blocks() {
            self.horizon - start
        } else {
            self.block_length
        };
        (start, len)
    }

    #[inline]
    pub fn get(&self, block: usize, cell: usize) -> f64 {
        self.values[block * self.num_cells() + cell]
    }

    pub fn set(&mut self, block: usize, cell: usize, value: f64) {
        let n = self.num_cells();
        self.values[block * n + cell] = value;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if let Some(bad) = self.values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(SimError::TensorShape(format!("entry {bad} is negative or non-finite")));
        }
        let total = self.total();
        if total > 1.0 + 1e-9 {
            return Err(SimError::TensorShape(format!("entries sum to {total} > 1")));
        }
        if self.values.len() != self.num_blocks() * self.num_cells() {
            return Err(SimError::TensorShape("value count does not match shape".into()));
        }
        Ok(())
    }

    /// Whole SMSs planned per (block, cell).
    pub fn planned_sms(&self, cfg: &CampaignConfig) -> Vec<u64> {
        self.values.iter().map(|&f| cfg.sms_for_fraction(f)).collect()
    }

    /// Planned SMS totals summed over time, per cell.
    pub fn planned_sms_per_cell(&self, cfg: &CampaignConfig) -> Vec<u64> {
        let plan = self.planned_sms(cfg);
        let n = self.num_cells();
        let mut out = vec![0u64; n];
        for (i, v) in plan.iter().enumerate() {
            out[i % n] += v;
        }
        out
    }

    /// Writes one row per cell: `block,age_bucket,gender,ses,fraction` for
    /// socio-demographic tensors, `block,status,fraction` for status ones.
    /// Collapsed axes are written as `all`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        match self.cells {
            CellMap::Socio(grid) => {
                out.write_record(["block", "age_bucket", "gender", "ses", "fraction"])?;
                let [na, ng, ns] = grid.dims();
                for b in 0..self.num_blocks() {
                    for a in 0..na {
                        for g in 0..ng {
                            for s in 0..ns {
                                let cell = (a * ng + g) * ns + s;
                                out.write_record([
                                    b.to_string(),
                                    if grid.split_age { a.to_string() } else { "all".into() },
                                    if grid.split_gender {
                                        crate::population::Gender::ALL[g].label().to_string()
                                    } else {
                                        "all".into()
                                    },
                                    if grid.split_ses { (s + 1).to_string() } else { "all".into() },
                                    format!("{}", self.get(b, cell)),
                                ])?;
                            }
                        }
                    }
                }
            }
            CellMap::Status(grid) => {
                out.write_record(["block", "status", "fraction"])?;
                for b in 0..self.num_blocks() {
                    for c in 0..grid.classes() {
                        let label = if grid.split_status {
                            STATUS_CLASSES[c].label().to_string()
                        } else {
                            "all".into()
                        };
                        out.write_record([b.to_string(), label, format!("{}", self.get(b, c))])?;
                    }
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Reads the CSV layout written by [`write_csv`](Self::write_csv). The
    /// CSV does not carry timing, so the horizon is supplied and the block
    /// length is taken as `horizon / num_blocks`.
    pub fn read_csv<R: Read>(r: R, horizon: u32) -> Result<Self, SimError> {
        let bad = |m: String| SimError::TensorShape(m);
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
        let cols: Vec<&str> = headers.iter().collect();
        let socio = match cols.as_slice() {
            ["block", "age_bucket", "gender", "ses", "fraction"] => true,
            ["block", "status", "fraction"] => false,
            _ => return Err(bad(format!("unrecognised tensor header {cols:?}"))),
        };
        let mut rows: Vec<(usize, Vec<String>, f64)> = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let block: usize = rec[0]
                .parse()
                .map_err(|_| bad(format!("row {}: bad block `{}`", line + 2, &rec[0])))?;
            let n = rec.len();
            let frac: f64 = rec[n - 1]
                .parse()
                .map_err(|_| bad(format!("row {}: bad fraction `{}`", line + 2, &rec[n - 1])))?;
            rows.push((block, rec.iter().skip(1).take(n - 2).map(String::from).collect(), frac));
        }
        if rows.is_empty() {
            return Err(bad("tensor CSV has no rows".into()));
        }
        let nb = rows.iter().map(|r| r.0).max().unwrap() + 1;
        let is_all = |col: usize| rows.iter().all(|r| r.1[col] == "all");
        let cells = if socio {
            CellMap::Socio(SocioGrid {
                split_age: !is_all(0),
                split_gender: !is_all(1),
                split_ses: !is_all(2),
            })
        } else {
            CellMap::Status(StatusGrid {
                split_status: !is_all(0),
            })
        };
        let block_length = (horizon / nb as u32).max(1);
        let mut t = Self::zeros(cells, horizon, block_length);
        if t.num_blocks() != nb {
            return Err(bad(format!(
                "{nb} blocks do not tile a horizon of {horizon} rounds"
            )));
        }
        if rows.len() != t.values.len() {
            return Err(bad(format!("expected {} rows, got {}", t.values.len(), rows.len())));
        }
        for (block, keys, frac) in rows {
            let cell = match cells {
                CellMap::Socio(grid) => {
                    let a = if grid.split_age {
                        keys[0].parse::<u8>().map_err(|_| bad(format!("bad age bucket {}", keys[0])))?
                    } else {
                        0
                    };
                    let g = match keys[1].as_str() {
                        "female" if grid.split_gender => crate::population::Gender::Female,
                        "male" | "all" => crate::population::Gender::Male,
                        other => return Err(bad(format!("bad gender `{other}`"))),
                    };
                    let s = if grid.split_ses {
                        keys[2].parse::<u8>().map_err(|_| bad(format!("bad ses {}", keys[2])))?
                    } else {
                        1
                    };
                    if a as usize >= NUM_AGE_BUCKETS || !(1..=NUM_SES as u8).contains(&s) {
                        return Err(bad(format!("cell ({a}, {s}) out of range")));
                    }
                    grid.cell_of(GroupKey::new(a, g, s))
                }
                CellMap::Status(grid) => {
                    if !grid.split_status {
                        0
                    } else {
                        STATUS_CLASSES
                            .iter()
                            .position(|s| s.label() == keys[0])
                            .ok_or_else(|| bad(format!("bad status `{}`", keys[0])))?
                    }
                }
            };
            if block >= nb {
                return Err(bad(format!("block {block} out of range")));
            }
            t.set(block, cell, frac);
        }
        t.validate()?;
        Ok(t)
    }
}

/// Planned cost of a tensor: whole SMSs per cell times the SMS price.
pub fn tensor_cost(tensor: &CampaignTensor, cfg: &CampaignConfig) -> f64 {
    tensor.planned_sms(cfg).iter().sum::<u64>() as f64 * cfg.sms_cost
}

/// Realised cost of a ledger.
pub fn ledger_cost(ledger: &BudgetLedger) -> f64 {
    ledger.spent()
}

/// SMSs sent, by group and by round, against the budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub sms_cost: f64,
    pub budget: f64,
    pub sms_budget: u64,
    pub sent: u64,
    pub per_group: Vec<u64>,
    pub per_round: Vec<u64>,
    /// Quota that found no eligible recipient before its block ended.
    pub forfeited: u64,
}

impl BudgetLedger {
    pub fn new(cfg: &CampaignConfig, horizon: u32) -> Self {
        BudgetLedger {
            sms_cost: cfg.sms_cost,
            budget: cfg.budget,
            sms_budget: cfg.sms_budget(),
            sent: 0,
            per_group: vec![0; NUM_GROUPS],
            per_round: vec![0; horizon as usize],
            forfeited: 0,
        }
    }

    pub fn spent(&self) -> f64 {
        self.sent as f64 * self.sms_cost
    }

    pub fn within_budget(&self) -> bool {
        self.sent <= self.sms_budget
    }

    fn record(&mut self, offset: u32, group: GroupKey) -> Result<(), SimError> {
        self.sent += 1;
        if self.sent > self.sms_budget {
            return Err(SimError::BudgetExceeded {
                sent: self.sent,
                allowed: self.sms_budget,
            });
        }
        self.per_group[group.index()] += 1;
        self.per_round[offset as usize] += 1;
        Ok(())
    }
}

/// Integer share of `total` for step `k` of `len` equal steps, carrying the
/// fractional remainder forward so the shares sum to `total` exactly.
#[inline]
pub fn even_share(total: u64, len: u32, k: u32) -> u64 {
    let t = total as u128;
    let l = len as u128;
    let k = k as u128;
    (((k + 1) * t) / l - (k * t) / l) as u64
}

/// Splits `quota` across entries proportionally to `weights` by largest
/// remainder; all-zero weights split uniformly. Ties go to lower indices.
pub fn proportional_split(weights: &[u64], quota: u64) -> Vec<u64> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    let total: u128 = weights.iter().map(|&w| w as u128).sum();
    let (w, total): (Vec<u128>, u128) = if total == 0 {
        (vec![1; n], n as u128)
    } else {
        (weights.iter().map(|&w| w as u128).collect(), total)
    };
    let q = quota as u128;
    let mut out: Vec<u64> = w.iter().map(|&wi| (wi * q / total) as u64).collect();
    let assigned: u64 = out.iter().sum();
    let mut rem: Vec<(u128, usize)> = w
        .iter()
        .enumerate()
        .map(|(i, &wi)| ((wi * q) % total, i))
        .collect();
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in rem.iter().take((quota - assigned) as usize) {
        out[i] += 1;
    }
    out
}

/// Sends up to `quota` SMSs to distinct members of `members`, returning how
/// many were sent.
fn send_to_cell<R: Rng + ?Sized>(
    members: &[u32],
    quota: u64,
    offset: u32,
    individuals: &mut [Individual],
    cfg: &CampaignConfig,
    ledger: &mut BudgetLedger,
    rng: &mut R,
) -> Result<u64, SimError> {
    let n = (quota as usize).min(members.len());
    if n == 0 {
        return Ok(0);
    }
    let mut deliver = |id: u32| -> Result<(), SimError> {
        let ind = &mut individuals[id as usize];
        apply_sms(ind, cfg);
        ledger.record(offset, ind.group)
    };
    if n == members.len() {
        for &id in members {
            deliver(id)?;
        }
    } else {
        for i in index::sample(rng, members.len(), n).iter() {
            deliver(members[i])?;
        }
    }
    Ok(n as u64)
}

/// Per-round dispatcher for a [`CampaignTensor`].
///
/// Each cell's block total is spread evenly over the block's rounds. Quota
/// that finds no eligible recipient rolls into the next round of the same
/// block and is forfeited when the block ends.
#[derive(Clone, Debug)]
pub struct TensorDispatcher {
    tensor: CampaignTensor,
    plan: Vec<u64>,
    carry: Vec<u64>,
    members: Vec<Vec<u32>>,
}

impl TensorDispatcher {
    pub fn new(tensor: CampaignTensor, cfg: &CampaignConfig, horizon: u32) -> Result<Self, SimError> {
        if tensor.horizon != horizon {
            return Err(SimError::HorizonMismatch {
                tensor: tensor.horizon,
                horizon,
            });
        }
        tensor.validate()?;
        let plan = tensor.planned_sms(cfg);
        let planned: u64 = plan.iter().sum();
        if planned > cfg.sms_budget() {
            return Err(SimError::BudgetExceeded {
                sent: planned,
                allowed: cfg.sms_budget(),
            });
        }
        let cells = tensor.num_cells();
        Ok(TensorDispatcher {
            tensor,
            plan,
            carry: vec![0; cells],
            members: Vec::new(),
        })
    }

    pub fn tensor(&self) -> &CampaignTensor {
        &self.tensor
    }

    /// Quota of each cell for a round offset, before carry.
    pub fn base_quota(&self, offset: u32, cell: usize) -> u64 {
        let b = self.tensor.block_of(offset);
        let (start, len) = self.tensor.block_span(b);
        even_share(self.plan[b * self.tensor.num_cells() + cell], len, offset - start)
    }

    pub fn dispatch_round<R: Rng + ?Sized>(
        &mut self,
        offset: u32,
        pop: &mut PopulationState,
        cfg: &CampaignConfig,
        policy: &PolicySpec,
        ledger: &mut BudgetLedger,
        rng: &mut R,
    ) -> Result<u64, SimError> {
        let cells = self.tensor.num_cells();
        let b = self.tensor.block_of(offset);
        let (start, len) = self.tensor.block_span(b);
        let mut quotas = Vec::with_capacity(cells);
        let mut any = false;
        for c in 0..cells {
            let q = even_share(self.plan[b * cells + c], len, offset - start) + self.carry[c];
            any |= q > 0;
            quotas.push(q);
        }
        let mut sent = 0;
        if any {
            eligible_by_cell(&pop.individuals, &self.tensor.cells, policy, &mut self.members);
            for (c, &q) in quotas.iter().enumerate() {
                if q == 0 {
                    continue;
                }
                let n = send_to_cell(
                    &self.members[c],
                    q,
                    offset,
                    &mut pop.individuals,
                    cfg,
                    ledger,
                    rng,
                )?;
                sent += n;
                self.carry[c] = q - n;
            }
        }
        if offset + 1 == start + len {
            ledger.forfeited += self.carry.iter().sum::<u64>();
            self.carry.iter_mut().for_each(|c| *c = 0);
        }
        Ok(sent)
    }
}

/// Per-round dispatcher that splits each round's budget share across the 140
/// groups in proportion to their cumulative disease deaths so far.
#[derive(Clone, Debug)]
pub struct GreedyDispatcher {
    total: u64,
    horizon: u32,
    carry: u64,
    members: Vec<Vec<u32>>,
}

impl GreedyDispatcher {
    pub fn new(cfg: &CampaignConfig, horizon: u32) -> Self {
        GreedyDispatcher {
            total: cfg.sms_budget(),
            horizon,
            carry: 0,
            members: Vec::new(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn dispatch_round<R: Rng + ?Sized>(
        &mut self,
        offset: u32,
        deaths_by_group: &[u64],
        pop: &mut PopulationState,
        cfg: &CampaignConfig,
        policy: &PolicySpec,
        ledger: &mut BudgetLedger,
        rng: &mut R,
    ) -> Result<u64, SimError> {
        let quota = even_share(self.total, self.horizon, offset) + self.carry;
        let mut sent = 0;
        if quota > 0 {
            let map = CellMap::Socio(SocioGrid::default());
            eligible_by_cell(&pop.individuals, &map, policy, &mut self.members);
            let split = proportional_split(deaths_by_group, quota);
            for (g, &q) in split.iter().enumerate() {
                if q == 0 {
                    continue;
                }
                sent += send_to_cell(
                    &self.members[g],
                    q,
                    offset,
                    &mut pop.individuals,
                    cfg,
                    ledger,
                    rng,
                )?;
            }
        }
        self.carry = quota - sent;
        if offset + 1 == self.horizon {
            ledger.forfeited += self.carry;
            self.carry = 0;
        }
        Ok(sent)
    }
}
