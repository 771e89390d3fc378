//! Emulated bank of hardware-protected verification data registers.
//!
//! Registers behave like PCRs with two additions: a `pristine` flag set by
//! reset, and a role marking which registers currently serve as tree roots,
//! intermediates, or are locked. A pristine register holds nil; on the first
//! extend after reset the measurement is written directly into the register
//! (the default policy) instead of being chained onto the reset value.
//!
//! A `RegisterBank` is one logical device. All mutation goes through
//! `&mut self`, so callers on multiple threads must serialize access
//! themselves; shared `&self` reads are safe.

use crate::builder::{TreeBuilder, TreeError};
use crate::digest::{extend, Digest, DigestError, HashAlgorithm};
use crate::sml::SmlRecord;
use thiserror::Error;

/// Errors from direct register commands.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegisterError {
    #[error("register index {0} out of range")]
    OutOfRange(usize),
    #[error("register {0} is locked")]
    Locked(usize),
    #[error(transparent)]
    Digest(#[from] DigestError),
}

/// What a register is currently used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegisterRole {
    /// Not allocated to any tree.
    Free,
    /// Holds an active subtree root for the tree under construction.
    Intermediate,
    /// Designated root of the tree under construction.
    TreeRoot,
    /// Holds the root of a completed tree; rejects all mutation.
    Locked,
}

/// Behaviour of the first extend into a pristine register.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PristineExtend {
    /// Write the value directly and clear the pristine flag.
    #[default]
    DirectWrite,
    /// Strict-TPM compatibility: chain onto the all-zero reset value, so a
    /// pristine extend with `x` yields `H(0 ∥ x)` and every node takes the
    /// form `(0 ◇ x) ◇ y`. Trees built this way are not plain Merkle trees.
    ZeroPrefix,
}

/// A single emulated verification data register.
#[derive(Debug, Clone)]
pub struct Register {
    value: Digest,
    pristine: bool,
    role: RegisterRole,
}

impl Register {
    fn new() -> Self {
        Register {
            value: Digest::nil(),
            pristine: true,
            role: RegisterRole::Free,
        }
    }

    pub fn value(&self) -> Digest {
        self.value
    }

    pub fn is_pristine(&self) -> bool {
        self.pristine
    }

    pub fn role(&self) -> RegisterRole {
        self.role
    }
}

/// Bank of `r` registers plus the tree-command facade.
#[derive(Debug)]
pub struct RegisterBank {
    registers: Vec<Register>,
    alg: HashAlgorithm,
    pristine_extend: PristineExtend,
    active: Option<TreeBuilder>,
}

impl RegisterBank {
    /// A bank of `count` pristine registers (count must be at least 1).
    pub fn new(count: usize, alg: HashAlgorithm) -> Self {
        Self::with_pristine_extend(count, alg, PristineExtend::default())
    }

    pub fn with_pristine_extend(
        count: usize,
        alg: HashAlgorithm,
        pristine_extend: PristineExtend,
    ) -> Self {
        assert!(count >= 1, "a register bank needs at least one register");
        RegisterBank {
            registers: (0..count).map(|_| Register::new()).collect(),
            alg,
            pristine_extend,
            active: None,
        }
    }

    pub fn len(&self) -> usize {
        self.registers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.registers.is_empty()
    }

    pub fn hash_alg(&self) -> HashAlgorithm {
        self.alg
    }

    pub fn pristine_extend(&self) -> PristineExtend {
        self.pristine_extend
    }

    pub fn register(&self, index: usize) -> Result<&Register, RegisterError> {
        self.registers
            .get(index)
            .ok_or(RegisterError::OutOfRange(index))
    }

    fn register_mut(&mut self, index: usize) -> Result<&mut Register, RegisterError> {
        self.registers
            .get_mut(index)
            .ok_or(RegisterError::OutOfRange(index))
    }

    /// Current register value; nil after reset.
    pub fn pcr_read(&self, index: usize) -> Result<Digest, RegisterError> {
        Ok(self.register(index)?.value())
    }

    /// Resets a register to the pristine (nil) state. Idempotent.
    pub fn pcr_reset(&mut self, index: usize) -> Result<(), RegisterError> {
        let reg = self.register_mut(index)?;
        if reg.role == RegisterRole::Locked {
            return Err(RegisterError::Locked(index));
        }
        reg.value = Digest::nil();
        reg.pristine = true;
        Ok(())
    }

    /// Extends a register with a measurement and returns the new value.
    ///
    /// On a pristine register the behaviour follows the bank's
    /// [`PristineExtend`] policy; otherwise the register value becomes
    /// `value ◇ m`.
    pub fn pcr_extend(&mut self, index: usize, m: &Digest) -> Result<Digest, RegisterError> {
        m.check_measurement(self.alg)?;
        let alg = self.alg;
        let policy = self.pristine_extend;
        let reg = self.register_mut(index)?;
        if reg.role == RegisterRole::Locked {
            return Err(RegisterError::Locked(index));
        }
        if reg.pristine {
            reg.value = match policy {
                PristineExtend::DirectWrite => *m,
                PristineExtend::ZeroPrefix => {
                    let zeros = Digest::from_bytes(&vec![0u8; alg.output_len()])
                        .expect("zero digest of algorithm length");
                    extend(&zeros, m, alg)?
                }
            };
            reg.pristine = false;
        } else {
            reg.value = extend(&reg.value, m, alg)?;
        }
        Ok(reg.value)
    }

    pub(crate) fn set_role(&mut self, index: usize, role: RegisterRole) {
        self.registers[index].role = role;
    }

    /// Freezes a register so it rejects all further mutation.
    pub fn lock(&mut self, index: usize) -> Result<(), RegisterError> {
        self.register_mut(index)?.role = RegisterRole::Locked;
        Ok(())
    }

    /// Indices of registers with role [`RegisterRole::Free`].
    pub fn free_registers(&self) -> Vec<usize> {
        self.registers
            .iter()
            .enumerate()
            .filter(|(_, r)| r.role == RegisterRole::Free)
            .map(|(i, _)| i)
            .collect()
    }

    /// Starts tree formation with its root in register `root`.
    ///
    /// Allocates `depth - 1` further free registers as intermediates and
    /// resets all slots to nil. Only one tree may be active per bank.
    pub fn tree_begin(&mut self, root: usize, depth: u32, arity: u32) -> Result<(), TreeError> {
        if self.active.is_some() {
            return Err(TreeError::TreeAlreadyActive);
        }
        let builder = TreeBuilder::new(self, root, depth, arity)?;
        self.active = Some(builder);
        Ok(())
    }

    /// One tree-extend command: feeds a measurement to the builder bound to
    /// `root` and returns every log record the step produced, leaf first.
    ///
    /// When the final leaf completes the tree the last returned record is the
    /// global root, the root register is locked, and the intermediates are
    /// released.
    pub fn tree_extend(&mut self, root: usize, m: &Digest) -> Result<Vec<SmlRecord>, TreeError> {
        let mut builder = self.take_bound(root)?;
        let result = builder.add_measurement(self, m);
        match result {
            Ok(records) => {
                if builder.is_complete() {
                    self.release_tree(&builder)?;
                } else {
                    self.active = Some(builder);
                }
                Ok(records)
            }
            Err(e) => {
                self.active = Some(builder);
                Err(e)
            }
        }
    }

    /// Cleanup command for an incomplete tree: merges the remaining active
    /// subtree roots, locks the root register, and returns the records the
    /// cleanup wrote (the last one is the global root).
    pub fn tree_finalize(&mut self, root: usize) -> Result<Vec<SmlRecord>, TreeError> {
        let mut builder = self.take_bound(root)?;
        let result = builder.finalize(self);
        match result {
            Ok(records) => {
                self.release_tree(&builder)?;
                Ok(records)
            }
            Err(e) => {
                self.active = Some(builder);
                Err(e)
            }
        }
    }

    /// The builder currently bound to `root`, if any.
    pub fn bound_tree(&self, root: usize) -> Option<&TreeBuilder> {
        self.active.as_ref().filter(|b| b.root_register() == root)
    }

    fn take_bound(&mut self, root: usize) -> Result<TreeBuilder, TreeError> {
        match self.active.take() {
            Some(b) if b.root_register() == root => Ok(b),
            Some(b) => {
                self.active = Some(b);
                Err(self.exhausted_or_unbound(root))
            }
            None => Err(self.exhausted_or_unbound(root)),
        }
    }

    // A locked register held a tree that is now exhausted; anything else
    // simply has no tree bound to it.
    fn exhausted_or_unbound(&self, root: usize) -> TreeError {
        match self.register(root) {
            Ok(reg) if reg.role() == RegisterRole::Locked => TreeError::TreeFull,
            _ => TreeError::UnboundRegister(root),
        }
    }

    fn release_tree(&mut self, builder: &TreeBuilder) -> Result<(), TreeError> {
        for &slot in builder.slots() {
            if slot == builder.root_register() {
                self.set_role(slot, RegisterRole::Locked);
            } else {
                self.pcr_reset(slot)?;
                self.set_role(slot, RegisterRole::Free);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::digest::hash_leaf;

    const ALG: HashAlgorithm = HashAlgorithm::Sha1;

    #[test]
    fn fresh_register_reads_nil() {
        let bank = RegisterBank::new(4, ALG);
        assert!(bank.pcr_read(0).unwrap().is_nil());
        assert!(bank.register(0).unwrap().is_pristine());
    }

    #[test]
    fn pristine_extend_writes_directly() {
        let mut bank = RegisterBank::new(1, ALG);
        let m = hash_leaf(b"m", ALG);
        assert_eq!(bank.pcr_extend(0, &m).unwrap(), m);
        assert_eq!(bank.pcr_read(0).unwrap(), m);
        assert!(!bank.register(0).unwrap().is_pristine());
    }

    #[test]
    fn non_pristine_extend_chains() {
        let mut bank = RegisterBank::new(1, ALG);
        let a = hash_leaf(b"a", ALG);
        let b = hash_leaf(b"b", ALG);
        bank.pcr_extend(0, &a).unwrap();
        let out = bank.pcr_extend(0, &b).unwrap();
        // H(sha1("a") ∥ sha1("b")), frozen from an independent implementation.
        assert_eq!(out.to_hex(), "0056540ac6237d0263dd0faa45c71c73bc480f34");
    }

    #[test]
    fn zero_prefix_policy_chains_onto_reset_value() {
        let mut bank = RegisterBank::with_pristine_extend(1, ALG, PristineExtend::ZeroPrefix);
        let m = hash_leaf(b"m", ALG);
        let out = bank.pcr_extend(0, &m).unwrap();
        // H(20 zero bytes ∥ sha1("m")), frozen from an independent implementation.
        assert_eq!(out.to_hex(), "39f3e85459cea918bb50c0fe16d30e14f2b23594");
    }

    #[test]
    fn reset_is_idempotent() {
        let mut bank = RegisterBank::new(1, ALG);
        bank.pcr_extend(0, &hash_leaf(b"x", ALG)).unwrap();
        bank.pcr_reset(0).unwrap();
        assert!(bank.pcr_read(0).unwrap().is_nil());
        bank.pcr_reset(0).unwrap();
        assert!(bank.pcr_read(0).unwrap().is_nil());
        assert!(bank.register(0).unwrap().is_pristine());
    }

    #[test]
    fn locked_register_rejects_all_mutation() {
        let mut bank = RegisterBank::new(2, ALG);
        let m = hash_leaf(b"frozen", ALG);
        bank.pcr_extend(0, &m).unwrap();
        bank.lock(0).unwrap();
        assert_eq!(bank.pcr_reset(0), Err(RegisterError::Locked(0)));
        assert_eq!(bank.pcr_extend(0, &m), Err(RegisterError::Locked(0)));
        assert_eq!(bank.pcr_read(0).unwrap(), m);
    }

    // Exhaustive short command sequences never change a locked register.
    #[test]
    fn locked_register_survives_every_command_sequence() {
        let m1 = hash_leaf(b"one", ALG);
        let m2 = hash_leaf(b"two", ALG);
        type Command = Box<dyn Fn(&mut RegisterBank, usize)>;
        let commands: Vec<Command> = vec![
            Box::new(|b, i| {
                let _ = b.pcr_reset(i);
            }),
            Box::new(move |b, i| {
                let _ = b.pcr_extend(i, &m1);
            }),
            Box::new(move |b, i| {
                let _ = b.pcr_extend(i, &m2);
            }),
        ];
        let n = commands.len();
        for c0 in 0..n {
            for c1 in 0..n {
                for c2 in 0..n {
                    let mut bank = RegisterBank::new(2, ALG);
                    bank.pcr_extend(0, &m1).unwrap();
                    let frozen = bank.pcr_read(0).unwrap();
                    bank.lock(0).unwrap();
                    for (step, idx) in [(c0, 0), (c1, 1), (c2, 0)] {
                        commands[step](&mut bank, idx);
                    }
                    assert_eq!(bank.pcr_read(0).unwrap(), frozen);
                    assert_eq!(bank.register(0).unwrap().role(), RegisterRole::Locked);
                }
            }
        }
    }

    #[test]
    fn extend_rejects_nil_and_wrong_length() {
        let mut bank = RegisterBank::new(1, ALG);
        assert!(matches!(
            bank.pcr_extend(0, &Digest::nil()),
            Err(RegisterError::Digest(DigestError::UnexpectedNil))
        ));
        let wide = hash_leaf(b"x", HashAlgorithm::Sha256);
        assert!(matches!(
            bank.pcr_extend(0, &wide),
            Err(RegisterError::Digest(DigestError::LengthMismatch { .. }))
        ));
    }

    #[test]
    fn out_of_range_index() {
        let bank = RegisterBank::new(2, ALG);
        assert_eq!(bank.pcr_read(2), Err(RegisterError::OutOfRange(2)));
    }
}
