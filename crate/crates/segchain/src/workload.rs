//! Seeded transaction workload: value-1 transfers between random accounts
//! with long random descriptions, reproducing the experimental load the
//! storage comparisons run under.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::chain::{AccountId, Operation};

/// Upper bound on concurrently simulated transaction clients.
pub const MAX_CLIENTS: u32 = 32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkloadError {
    #[error("invalid workload config: {reason}")]
    Invalid { reason: String },
}

/// Parameters of the transaction load. `value` is fixed at 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WorkloadConfig {
    pub num_clients: u32,
    pub num_accounts: u32,
    pub description_min_len: u32,
    pub description_max_len: u32,
    pub value: u64,
    pub seed: u64,
}

impl WorkloadConfig {
    pub fn new(
        num_clients: u32,
        num_accounts: u32,
        description_min_len: u32,
        description_max_len: u32,
        seed: u64,
    ) -> Result<Self, WorkloadError> {
        let config = WorkloadConfig {
            num_clients,
            num_accounts,
            description_min_len,
            description_max_len,
            value: 1,
            seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let fail = |reason: String| Err(WorkloadError::Invalid { reason });
        // Zero clients is the degenerate no-load case (every payload
        // block comes out empty); the cap is the binding constraint.
        if self.num_clients > MAX_CLIENTS {
            return fail(format!(
                "num_clients must be at most {}, got {}",
                MAX_CLIENTS, self.num_clients
            ));
        }
        if self.num_accounts < 2 {
            return fail(format!(
                "num_accounts must be at least 2, got {}",
                self.num_accounts
            ));
        }
        if self.description_max_len < self.description_min_len {
            return fail(format!(
                "description_max_len {} below description_min_len {}",
                self.description_max_len, self.description_min_len
            ));
        }
        if self.value != 1 {
            return fail(format!("transaction value is fixed at 1, got {}", self.value));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

impl Default for WorkloadConfig {
    /// Up to 32 clients over 64 accounts, value-1 transactions with
    /// 1000 to 1100 random description bytes.
    fn default() -> Self {
        WorkloadConfig {
            num_clients: 32,
            num_accounts: 64,
            description_min_len: 1000,
            description_max_len: 1100,
            value: 1,
            seed: 0,
        }
    }
}

/// Deterministic transaction stream; every byte is a function of the
/// config and its seed.
pub struct TransactionGenerator {
    config: WorkloadConfig,
    rng: ChaCha12Rng,
}

impl TransactionGenerator {
    pub fn new(config: WorkloadConfig) -> Result<Self, WorkloadError> {
        config.validate()?;
        Ok(TransactionGenerator {
            config,
            rng: ChaCha12Rng::seed_from_u64(config.seed),
        })
    }

    pub fn config(&self) -> &WorkloadConfig {
        &self.config
    }

    /// Next value-1 transaction between two distinct uniformly chosen
    /// accounts, with uniform description length and bytes.
    pub fn next_transaction(&mut self) -> Operation {
        let source = self.rng.gen_range(0..self.config.num_accounts as u64);
        let destination = loop {
            let candidate = self.rng.gen_range(0..self.config.num_accounts as u64);
            if candidate != source {
                break candidate;
            }
        };
        let len = self
            .rng
            .gen_range(self.config.description_min_len..=self.config.description_max_len);
        let mut description = vec![0u8; len as usize];
        self.rng.fill(description.as_mut_slice());
        Operation::Transaction {
            source: AccountId::from_index(source),
            destination: AccountId::from_index(destination),
            value: self.config.value,
            description,
        }
    }

    /// One submission round: `num_clients` transactions in client order.
    pub fn next_round(&mut self) -> Vec<Operation> {
        (0..self.config.num_clients)
            .map(|_| self.next_transaction())
            .collect()
    }
}
