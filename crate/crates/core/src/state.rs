//! A level matrix paired with its criterion value, kept in sync under moves.
//!
//! `φ_t` criteria go through [`DistanceCache`]; CD2 has no cheap update and
//! is recomputed. Points are always midpoint coordinates.

use crate::criteria::{
    csm, CriterionConfig, CriterionError, CriterionKind, CriterionValue, DistanceCache,
};
use crate::design::{midpoint, JitterMode, LevelMatrix};
use crate::neighborhood::{ExchangeMove, MoveError};

#[derive(Debug, thiserror::Error)]
pub enum StateError {
    #[error(transparent)]
    Criterion(#[from] CriterionError),
    #[error(transparent)]
    Move(#[from] MoveError),
}

#[derive(Debug, Clone)]
enum Backend {
    Distances(Box<DistanceCache>),
    Full,
}

#[derive(Debug, Clone)]
pub struct DesignState {
    levels: LevelMatrix,
    config: CriterionConfig,
    backend: Backend,
    value: CriterionValue,
}

impl DesignState {
    pub fn new(levels: LevelMatrix, config: &CriterionConfig) -> Result<Self, CriterionError> {
        let design = levels.to_design(JitterMode::Midpoint, 0);
        let (backend, value) = match config.kind() {
            CriterionKind::PhiT => {
                let cache = DistanceCache::new(&design, config)?;
                let value = cache.value()?;
                (Backend::Distances(Box::new(cache)), value)
            }
            CriterionKind::Cd2 => (Backend::Full, csm(&design, config)?),
        };
        Ok(Self {
            levels,
            config: *config,
            backend,
            value,
        })
    }

    pub fn levels(&self) -> &LevelMatrix {
        &self.levels
    }

    pub fn into_levels(self) -> LevelMatrix {
        self.levels
    }

    pub fn config(&self) -> &CriterionConfig {
        &self.config
    }

    pub fn value(&self) -> &CriterionValue {
        &self.value
    }

    /// Scalar `φ_CSM` of the current matrix.
    pub fn combined(&self) -> f64 {
        self.value.combined
    }

    /// Criterion value after `mv`, leaving the state untouched.
    pub fn preview(&self, mv: &ExchangeMove) -> Result<CriterionValue, StateError> {
        match &self.backend {
            Backend::Distances(cache) => self.cache_preview(cache, mv),
            Backend::Full => {
                let mut trial = self.levels.clone();
                mv.apply(&mut trial)?;
                Ok(csm(
                    &trial.to_design(JitterMode::Midpoint, 0),
                    &self.config,
                )?)
            }
        }
    }

    /// Applies `mv` and returns the new value.
    pub fn commit(&mut self, mv: &ExchangeMove) -> Result<&CriterionValue, StateError> {
        let mut next = self.levels.clone();
        mv.apply(&mut next)?;
        let value = match &mut self.backend {
            Backend::Distances(cache) => {
                let l = self.levels.spec().lcm() as f64;
                match *mv {
                    ExchangeMove::WithinSlice { column, rows, .. } => {
                        cache.apply_within_slice(rows[0], rows[1], column)?
                    }
                    ExchangeMove::DifferentSlice { column, rows, .. } => {
                        cache.apply_different_slice(rows[0], rows[1], column)?
                    }
                    ExchangeMove::OutSlice {
                        column,
                        row,
                        new_level,
                        ..
                    } => cache.apply_out_slice(row, column, midpoint(new_level, l))?,
                }
            }
            Backend::Full => csm(&next.to_design(JitterMode::Midpoint, 0), &self.config)?,
        };
        self.levels = next;
        self.value = value;
        Ok(&self.value)
    }

    fn cache_preview(
        &self,
        cache: &DistanceCache,
        mv: &ExchangeMove,
    ) -> Result<CriterionValue, StateError> {
        if !mv.matches(&self.levels) {
            return Err(MoveError::Stale.into());
        }
        let l = self.levels.spec().lcm() as f64;
        let v = match *mv {
            ExchangeMove::WithinSlice { column, rows, .. } => {
                cache.preview_within_slice(rows[0], rows[1], column)?
            }
            ExchangeMove::DifferentSlice { column, rows, .. } => {
                cache.preview_different_slice(rows[0], rows[1], column)?
            }
            ExchangeMove::OutSlice {
                column,
                row,
                new_level,
                ..
            } => cache.preview_out_slice(row, column, midpoint(new_level, l))?,
        };
        Ok(v)
    }

    /// Recomputes the cache from scratch, discarding accumulated rounding.
    pub fn resync(&mut self) -> Result<(), CriterionError> {
        if let Backend::Distances(cache) = &mut self.backend {
            cache.resync()?;
            self.value = cache.value()?;
        }
        Ok(())
    }
}
