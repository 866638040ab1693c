use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{IrisError, Result};
use crate::params::Partition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LossKind {
    Enhancement,
    Asr,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Enhancement => "enhancement",
            LossKind::Asr => "asr",
        })
    }
}

impl FromStr for LossKind {
    type Err = IrisError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "enhancement" => Ok(LossKind::Enhancement),
            "asr" => Ok(LossKind::Asr),
            other => Err(IrisError::Config(format!("unknown loss `{other}`"))),
        }
    }
}

/// Which partitions start from pre-trained checkpoints, which are updated,
/// and which losses drive the updates. The enhancement module is part of
/// the pipeline exactly when `se` is initialized or updated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainRegime {
    pub name: String,
    pub init: BTreeSet<Partition>,
    pub update: BTreeSet<Partition>,
    pub losses: BTreeSet<LossKind>,
}

/// Series names of the initialization study, in plotting order.
pub const INIT_STUDY_MODELS: [&str; 5] = [
    "SSLR-ASR",
    "IRIS-random",
    "IRIS-init-FT_SE",
    "IRIS-init-FT_ASR",
    "IRIS-init-FT_SE+ASR",
];

fn set<T: Ord + Copy>(items: &[T]) -> BTreeSet<T> {
    items.iter().copied().collect()
}

impl TrainRegime {
    pub fn new(
        name: impl Into<String>,
        init: &[Partition],
        update: &[Partition],
        losses: &[LossKind],
    ) -> Result<Self> {
        let r = Self {
            name: name.into(),
            init: set(init),
            update: set(update),
            losses: set(losses),
        };
        r.validate()?;
        Ok(r)
    }

    /// Regime that only allows updates to `parts` (no initialization claims).
    pub fn update_only(parts: &[Partition]) -> Self {
        Self {
            name: "custom".into(),
            init: BTreeSet::new(),
            update: set(parts),
            losses: set(&[LossKind::Asr]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.update.contains(&Partition::Sslr) {
            return Err(IrisError::Config(format!(
                "regime `{}` updates the sslr partition, which is always frozen",
                self.name
            )));
        }
        if !self.update.is_empty() && self.losses.is_empty() {
            return Err(IrisError::Config(format!(
                "regime `{}` updates parameters but names no loss",
                self.name
            )));
        }
        if self.losses.contains(&LossKind::Enhancement) && !self.includes_se() {
            return Err(IrisError::Config(format!(
                "regime `{}` uses the enhancement loss without an enhancement module",
                self.name
            )));
        }
        Ok(())
    }

    pub fn includes_se(&self) -> bool {
        self.init.contains(&Partition::Se) || self.update.contains(&Partition::Se)
    }

    /// Fine-tuning combinations of a pre-trained SE + ASR pipeline.
    pub fn fine_tune(ft_se: bool, ft_asr: bool) -> Self {
        let all = [Partition::Se, Partition::Sslr, Partition::Asr];
        let (name, update, losses): (&str, Vec<Partition>, Vec<LossKind>) = match (ft_se, ft_asr) {
            (false, false) => ("no-FT", vec![], vec![]),
            (true, false) => ("FT_SE", vec![Partition::Se], vec![LossKind::Enhancement, LossKind::Asr]),
            (false, true) => ("FT_ASR", vec![Partition::Asr], vec![LossKind::Asr]),
            (true, true) => (
                "FT_SE+ASR",
                vec![Partition::Se, Partition::Asr],
                vec![LossKind::Enhancement, LossKind::Asr],
            ),
        };
        Self::new(name, &all, &update, &losses).expect("built-in regimes are valid")
    }

    /// The four fine-tuning combinations: none, SE only, ASR only, both.
    pub fn fine_tune_matrix() -> [TrainRegime; 4] {
        [
            Self::fine_tune(false, false),
            Self::fine_tune(true, false),
            Self::fine_tune(false, true),
            Self::fine_tune(true, true),
        ]
    }

    /// Models of the initialization study, by series name.
    pub fn init_study(name: &str) -> Result<Self> {
        use Partition::{Se, Sslr};
        const ASR: Partition = Partition::Asr;
        const ENH: LossKind = LossKind::Enhancement;
        let all = [Se, Sslr, ASR];
        match name {
            "SSLR-ASR" => Self::new(name, &[Sslr], &[ASR], &[LossKind::Asr]),
            "IRIS-random" => Self::new(name, &[Sslr], &[Se, ASR], &[ENH, LossKind::Asr]),
            "IRIS-init-FT_SE" => Self::new(name, &all, &[Se], &[ENH, LossKind::Asr]),
            "IRIS-init-FT_ASR" => Self::new(name, &all, &[ASR], &[LossKind::Asr]),
            "IRIS-init-FT_SE+ASR" => Self::new(name, &all, &[Se, ASR], &[ENH, LossKind::Asr]),
            other => Err(IrisError::Config(format!("unknown model `{other}`"))),
        }
    }

    /// `(key, value)` pairs under the `regime.` namespace.
    pub fn to_config(&self) -> Vec<(String, String)> {
        fn join<T: fmt::Display>(s: &BTreeSet<T>) -> String {
            s.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
        }
        vec![
            ("regime.name".into(), self.name.clone()),
            ("regime.init".into(), join(&self.init)),
            ("regime.update".into(), join(&self.update)),
            ("regime.losses".into(), join(&self.losses)),
        ]
    }

    pub fn from_config(lookup: impl Fn(&str) -> Option<String>) -> Result<Self> {
        fn parse<T: FromStr<Err = IrisError> + Ord>(v: &str) -> Result<BTreeSet<T>> {
            v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(T::from_str).collect()
        }
        let get = |k: &str| lookup(k).ok_or_else(|| IrisError::Config(format!("missing key `{k}`")));
        let r = Self {
            name: lookup("regime.name").unwrap_or_else(|| "custom".into()),
            init: parse(&get("regime.init")?)?,
            update: parse(&get("regime.update")?)?,
            losses: parse(&get("regime.losses")?)?,
        };
        r.validate()?;
        Ok(r)
    }
}
