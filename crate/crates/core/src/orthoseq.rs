//! Orthogonal periodic sequences of unit-TSPs and their recovery.
//!
//! Each of three unit-TSPs is allocated every `t_r` samples with a sign from
//! its Walsh row. The mixed pattern repeats every `4 * t_r`. Recovery matched
//! filters with each pulse, cuts the output into blocks of `4 * t_r` centred
//! on every allocation origin, and projects the block sequence onto the
//! Walsh rows.

use serde::{Deserialize, Serialize};

use crate::audio::{same_rate, AudioBuffer};
use crate::capricep::{self, generate_unit_tsp_with, TspDesign, UnitTsp};
use crate::error::{Error, Result};

/// Order-4 Walsh rows. Rows 0..3 drive the three sequences; row 3 is unused
/// and serves as the residual probe.
pub const WALSH: [[i8; 4]; 4] = [[1, 1, 1, 1], [1, -1, 1, -1], [1, 1, -1, -1], [1, -1, -1, 1]];

pub const DEFAULT_T_R: usize = 16384;
pub const DEFAULT_SEEDS: [u64; 3] = [1, 2, 3];
pub const MIN_ALLOCATIONS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetParams {
    pub seeds: [u64; 3],
    pub t_r: usize,
    pub total_duration: f64,
    pub rate: f64,
    pub nominal_duration: f64,
    pub design: TspDesign,
}

impl Default for SetParams {
    fn default() -> Self {
        Self {
            seeds: DEFAULT_SEEDS,
            t_r: DEFAULT_T_R,
            total_duration: 20.0,
            rate: 44100.0,
            nominal_duration: 0.4,
            design: TspDesign::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalSet {
    pub tsps: [UnitTsp; 3],
    pub t_r: usize,
    pub polarity: [[i8; 4]; 3],
    pub total_duration: f64,
    pub rate: f64,
    pub total_len: usize,
    pub allocation_count: usize,
}

/// Serializable identity of an orthogonal set, enough to rebuild it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetDescriptor {
    pub seeds: [u64; 3],
    pub t_r: usize,
    pub total_duration: f64,
    pub rate: f64,
    pub nominal_duration: f64,
    pub allocation_count: usize,
    pub design: TspDesign,
}

impl OrthogonalSet {
    pub fn seeds(&self) -> [u64; 3] {
        [self.tsps[0].seed(), self.tsps[1].seed(), self.tsps[2].seed()]
    }

    pub fn cycle_len(&self) -> usize {
        4 * self.t_r
    }

    pub fn descriptor(&self, design: TspDesign) -> SetDescriptor {
        SetDescriptor {
            seeds: self.seeds(),
            t_r: self.t_r,
            total_duration: self.total_duration,
            rate: self.rate,
            nominal_duration: self.tsps[0].nominal_duration(),
            allocation_count: self.allocation_count,
            design,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixSignal {
    pub mix: AudioBuffer,
    pub per_sequence: [AudioBuffer; 3],
    pub allocation_count: usize,
    pub t_r: usize,
}

pub fn build_orthogonal_set(
    seeds: [u64; 3],
    t_r: usize,
    total_duration: f64,
    rate: f64,
) -> Result<(OrthogonalSet, MixSignal)> {
    build_orthogonal_set_with(&SetParams { seeds, t_r, total_duration, rate, ..SetParams::default() })
}

pub fn build_orthogonal_set_with(params: &SetParams) -> Result<(OrthogonalSet, MixSignal)> {
    let [a, b, c] = params.seeds;
    if a == b || b == c || a == c {
        return Err(Error::param(format!("unit-TSP seeds must be distinct, got {:?}", params.seeds)));
    }
    if params.t_r == 0 {
        return Err(Error::param("t_r must be positive"));
    }
    if !(params.total_duration.is_finite() && params.total_duration > 0.0) {
        return Err(Error::param("total duration must be positive"));
    }
    if !(params.rate.is_finite() && params.rate > 0.0) {
        return Err(Error::param("sampling rate must be positive"));
    }
    let nominal = capricep::nominal_length(params.nominal_duration, params.rate);
    if (params.t_r as f64) < 0.9 * nominal as f64 {
        return Err(Error::param(format!(
            "t_r = {} is shorter than 0.9 x the unit-TSP length ({nominal})",
            params.t_r
        )));
    }
    let total_len = (params.total_duration * params.rate).round() as usize;
    let allocation_count = total_len / params.t_r;
    if allocation_count < MIN_ALLOCATIONS {
        return Err(Error::param(format!(
            "{} s holds {allocation_count} allocations, at least {MIN_ALLOCATIONS} needed",
            params.total_duration
        )));
    }

    let tsps: Vec<Result<UnitTsp>> = std::thread::scope(|s| {
        let handles: Vec<_> = params
            .seeds
            .iter()
            .map(|&seed| {
                s.spawn(move || {
                    generate_unit_tsp_with(seed, params.nominal_duration, params.rate, &params.design)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("generator thread panicked")).collect()
    });
    let tsps = tsps.into_iter().collect::<Result<Vec<_>>>()?;
    let tsps: [UnitTsp; 3] = tsps.try_into().expect("three pulses");

    let polarity = [WALSH[0], WALSH[1], WALSH[2]];
    let mut seqs: Vec<Vec<f64>> = Vec::with_capacity(3);
    for (tsp, row) in tsps.iter().zip(&polarity) {
        let mut seq = vec![0.0; total_len];
        for k in 0..allocation_count {
            let sign = row[k % 4] as f64;
            let start = k * params.t_r;
            for (dst, v) in seq[start..].iter_mut().zip(tsp.samples()) {
                *dst += sign * v;
            }
        }
        seqs.push(seq);
    }
    let mix: Vec<f64> = (0..total_len).map(|i| seqs[0][i] + seqs[1][i] + seqs[2][i]).collect();
    let to_buf = |v: Vec<f64>| AudioBuffer::new(v, params.rate);
    let mut it = seqs.into_iter();
    let per_sequence = [
        to_buf(it.next().unwrap())?,
        to_buf(it.next().unwrap())?,
        to_buf(it.next().unwrap())?,
    ];
    let set = OrthogonalSet {
        tsps,
        t_r: params.t_r,
        polarity,
        total_duration: params.total_duration,
        rate: params.rate,
        total_len,
        allocation_count,
    };
    let mix = MixSignal { mix: to_buf(mix)?, per_sequence, allocation_count, t_r: params.t_r };
    Ok((set, mix))
}

/// Projections of one sequence's matched-filter output.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRecovery {
    /// Matched-filter output over the whole signal.
    pub pulse_train: Vec<f64>,
    /// Block averages weighted by each of the four Walsh rows.
    pub projections: [Vec<f64>; 4],
    /// Row index of this sequence's own polarity.
    pub own_row: usize,
    /// Random-component estimate: the unused row alternated per cycle, so
    /// every component periodic in `4 * t_r` cancels.
    pub residual: Vec<f64>,
}

impl SequenceRecovery {
    pub fn own(&self) -> &[f64] {
        &self.projections[self.own_row]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseRecovery {
    pub sequences: [SequenceRecovery; 3],
    /// Lag of each block sample relative to the allocation origin, seconds.
    pub lag_axis: Vec<f64>,
    /// Sample index of the block origin (lag zero).
    pub origin: usize,
    /// Allocation indices averaged.
    pub blocks: Vec<usize>,
    pub rate: f64,
}

impl PulseRecovery {
    /// Mean of the three own-polarity projections.
    pub fn mean_own(&self) -> Vec<f64> {
        mean3(self.sequences.iter().map(|s| s.own()))
    }

    /// Mean of the three residual projections.
    pub fn mean_residual(&self) -> Vec<f64> {
        mean3(self.sequences.iter().map(|s| s.residual.as_slice()))
    }
}

fn mean3<'a>(rows: impl Iterator<Item = &'a [f64]>) -> Vec<f64> {
    let rows: Vec<&[f64]> = rows.collect();
    (0..rows[0].len()).map(|i| rows.iter().map(|r| r[i]).sum::<f64>() / rows.len() as f64).collect()
}

pub fn recover_pulses(signal: &AudioBuffer, set: &OrthogonalSet) -> Result<PulseRecovery> {
    recover_pulses_guarded(signal, set, 0)
}

/// As [`recover_pulses`], additionally excluding `guard` samples after the
/// start-up transient and before the end of the allocated region.
pub fn recover_pulses_guarded(
    signal: &AudioBuffer,
    set: &OrthogonalSet,
    guard: usize,
) -> Result<PulseRecovery> {
    if !same_rate(signal.rate(), set.rate) {
        return Err(Error::param(format!(
            "signal rate {} Hz differs from set rate {} Hz",
            signal.rate(),
            set.rate
        )));
    }
    let t_r = set.t_r;
    let cycle = 4 * t_r;
    if signal.len() < 2 * cycle {
        return Err(Error::param(format!(
            "signal of {} samples is shorter than two cycles ({} samples)",
            signal.len(),
            2 * cycle
        )));
    }
    let blocks = select_blocks(signal.len(), set, guard);
    if blocks.len() < 4 {
        return Err(Error::param(format!(
            "only {} steady-state allocations available, at least 4 needed",
            blocks.len()
        )));
    }

    let sequences: Vec<SequenceRecovery> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..3)
            .map(|k| {
                let blocks = &blocks;
                s.spawn(move || recover_one(signal, &set.tsps[k], k, t_r, blocks))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("recovery thread panicked")).collect()
    });
    let sequences: [SequenceRecovery; 3] = sequences.try_into().expect("three sequences");
    let lag_axis = (0..cycle).map(|n| (n as f64 - 2.0 * t_r as f64) / set.rate).collect();
    Ok(PulseRecovery { sequences, lag_axis, origin: 2 * t_r, blocks, rate: set.rate })
}

/// Allocation indices whose whole block lies in the steady-state region.
/// The count is rounded down to whole cycles.
fn select_blocks(len: usize, set: &OrthogonalSet, guard: usize) -> Vec<usize> {
    let t_r = set.t_r;
    let l_tsp = set.tsps[0].len();
    let steady_start = l_tsp + guard;
    let steady_end = (len.min(set.allocation_count * t_r)).saturating_sub(guard);
    let valid: Vec<usize> = (0..set.allocation_count)
        .filter(|&l| l * t_r >= 2 * t_r + steady_start && l * t_r + 2 * t_r + l_tsp <= steady_end)
        .collect();
    let usable = 4 * (valid.len() / 4);
    valid[..usable].to_vec()
}

fn recover_one(
    signal: &AudioBuffer,
    tsp: &UnitTsp,
    own_row: usize,
    t_r: usize,
    blocks: &[usize],
) -> SequenceRecovery {
    let cycle = 4 * t_r;
    let pulse_train = crate::fft::correlate(signal.samples(), tsp.samples());
    let count = blocks.len() as f64;
    let mut projections: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; cycle]);
    let residual_blocks = 8 * (blocks.len() / 8);
    let mut residual = vec![0.0; cycle];
    for (b, &l) in blocks.iter().enumerate() {
        let start = l * t_r - 2 * t_r;
        let seg = &pulse_train[start..start + cycle];
        for (w, proj) in projections.iter_mut().enumerate() {
            let sign = WALSH[w][l % 4] as f64 / count;
            for (p, v) in proj.iter_mut().zip(seg) {
                *p += sign * v;
            }
        }
        if b < residual_blocks {
            let flip = if (b / 4) % 2 == 0 { 1.0 } else { -1.0 };
            let sign = flip * WALSH[3][l % 4] as f64;
            for (r, v) in residual.iter_mut().zip(seg) {
                *r += sign * v;
            }
        }
    }
    if residual_blocks > 0 {
        // Scale to the noise level of a `count`-block average.
        let scale = 1.0 / (residual_blocks as f64 * count).sqrt();
        residual.iter_mut().for_each(|r| *r *= scale);
    } else {
        residual.clone_from(&projections[3]);
    }
    SequenceRecovery { pulse_train, projections, own_row, residual }
}
