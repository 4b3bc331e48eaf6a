//! Noncommutative words over a finite alphabet of Hermitian matrix symbols.
//!
//! Every moment in the bootstrap is indexed by a trace word. Because the trace
//! is cyclic, words are stored through their lexicographically minimal
//! rotation ([`CyclicWord`]). Letters are Hermitian, so the adjoint of a word
//! is its reversal; moments are assumed real, which identifies a cyclic class
//! with the class of its reversal ([`canonical_moment`]).

use std::cmp::Ordering;
use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use crate::error::{Error, Result};

/// A single matrix symbol, identified by its index in the alphabet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Letter(pub u8);

impl Letter {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A finite sequence of letters; the empty word is the identity.
///
/// Words are ordered graded-lexicographically: shorter words first, then
/// lexicographically by letter index.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct Word(Vec<Letter>);

impl Word {
    pub fn empty() -> Self {
        Word(Vec::new())
    }

    pub fn from_indices(indices: &[u8]) -> Self {
        Word(indices.iter().map(|&i| Letter(i)).collect())
    }

    /// `letter^power`
    pub fn power(letter: Letter, power: usize) -> Self {
        Word(vec![letter; power])
    }

    pub fn letters(&self) -> &[Letter] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn concat(&self, other: &Word) -> Word {
        let mut letters = Vec::with_capacity(self.len() + other.len());
        letters.extend_from_slice(&self.0);
        letters.extend_from_slice(&other.0);
        Word(letters)
    }

    pub fn rotate(&self, k: usize) -> Word {
        if self.is_empty() {
            return self.clone();
        }
        let mut letters = self.0.clone();
        letters.rotate_left(k % self.len());
        Word(letters)
    }

    pub fn reversed(&self) -> Word {
        let mut letters = self.0.clone();
        letters.reverse();
        Word(letters)
    }

    /// Number of occurrences of `letter`.
    pub fn count(&self, letter: Letter) -> usize {
        self.0.iter().filter(|&&l| l == letter).count()
    }

    pub fn max_letter(&self) -> Option<Letter> {
        self.0.iter().copied().max()
    }
}

impl From<Vec<Letter>> for Word {
    fn from(letters: Vec<Letter>) -> Self {
        Word(letters)
    }
}

impl Ord for Word {
    fn cmp(&self, other: &Self) -> Ordering {
        self.len()
            .cmp(&other.len())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Word {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Canonical representative of a rotation class of words.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CyclicWord(Word);

impl CyclicWord {
    pub fn identity() -> Self {
        CyclicWord(Word::empty())
    }

    pub fn word(&self) -> &Word {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_word(self) -> Word {
        self.0
    }
}

/// Start index of the lexicographically least rotation (Booth's algorithm).
fn least_rotation(s: &[Letter]) -> usize {
    let n = s.len() as i64;
    if n == 0 {
        return 0;
    }
    let at = |i: i64| s[(i % n) as usize];
    let mut f = vec![-1i64; 2 * n as usize];
    let mut k = 0i64;
    for j in 1..2 * n {
        let sj = at(j);
        let mut i = f[(j - k - 1) as usize];
        while i != -1 && sj != at(k + i + 1) {
            if sj < at(k + i + 1) {
                k = j - i - 1;
            }
            i = f[i as usize];
        }
        if i == -1 && sj != at(k + i + 1) {
            if sj < at(k + i + 1) {
                k = j;
            }
            f[(j - k) as usize] = -1;
        } else {
            f[(j - k) as usize] = i + 1;
        }
    }
    (k % n) as usize
}

/// Lexicographically minimal rotation of `w`.
pub fn canonical_cyclic(w: &Word) -> CyclicWord {
    let start = least_rotation(w.letters());
    CyclicWord(w.rotate(start))
}

/// Letter reversal; letters are Hermitian, so this is the adjoint.
pub fn adjoint(w: &Word) -> Word {
    w.reversed()
}

/// Moment index of `w`: the smaller of the cyclic classes of `w` and of its
/// adjoint. Real moments satisfy `m_w = m_{w*}`, so both share one index.
pub fn canonical_moment(w: &Word) -> CyclicWord {
    let direct = canonical_cyclic(w);
    let reversed = canonical_cyclic(&w.reversed());
    direct.min(reversed)
}

/// Whether the cyclic class of `w` differs from that of its adjoint. For such
/// words `m_w` and `m_{w*}` are complex conjugates and are only equal when
/// the moment is real.
pub fn is_chiral(w: &Word) -> bool {
    canonical_cyclic(w) != canonical_cyclic(&w.reversed())
}

/// Letter-wise symmetry: `letter i -> sign_i * letter perm_i`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SymmetryAction {
    signs: Vec<i8>,
    perm: Vec<Letter>,
}

impl SymmetryAction {
    pub fn new(signs: Vec<i8>, perm: Vec<Letter>) -> Result<Self> {
        if signs.len() != perm.len() {
            return Err(Error::invalid("symmetry signs and permutation differ in length"));
        }
        if signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::invalid("symmetry signs must be +1 or -1"));
        }
        let mut seen = vec![false; perm.len()];
        for l in &perm {
            if l.index() >= perm.len() || seen[l.index()] {
                return Err(Error::invalid("symmetry permutation is not a bijection"));
            }
            seen[l.index()] = true;
        }
        Ok(SymmetryAction { signs, perm })
    }

    pub fn identity(alphabet: usize) -> Self {
        SymmetryAction {
            signs: vec![1; alphabet],
            perm: (0..alphabet as u8).map(Letter).collect(),
        }
    }

    /// `letter -> -letter`
    pub fn flip(letter: Letter, alphabet: usize) -> Self {
        let mut s = Self::identity(alphabet);
        s.signs[letter.index()] = -1;
        s
    }

    /// `a <-> b`
    pub fn swap(a: Letter, b: Letter, alphabet: usize) -> Self {
        let mut s = Self::identity(alphabet);
        s.perm.swap(a.index(), b.index());
        s
    }

    pub fn alphabet_size(&self) -> usize {
        self.perm.len()
    }

    pub fn sign(&self, letter: Letter) -> i8 {
        self.signs[letter.index()]
    }

    pub fn image(&self, letter: Letter) -> Letter {
        self.perm[letter.index()]
    }
}

/// Apply `s` letter by letter; the sign is the product of the flipped letters.
pub fn apply_symmetry(w: &Word, s: &SymmetryAction) -> (Word, i8) {
    let mut sign = 1i8;
    let letters = w
        .letters()
        .iter()
        .map(|&l| {
            sign *= s.sign(l);
            s.image(l)
        })
        .collect::<Vec<_>>();
    (Word(letters), sign)
}

/// All words of length `0..=max_len` in graded-lexicographic order.
pub fn enumerate_words(alphabet_size: usize, max_len: usize) -> Vec<Word> {
    let mut out = vec![Word::empty()];
    let mut layer = vec![Word::empty()];
    for _ in 0..max_len {
        let mut next = Vec::with_capacity(layer.len() * alphabet_size);
        for w in &layer {
            for l in 0..alphabet_size {
                let mut letters = w.0.clone();
                letters.push(Letter(l as u8));
                next.push(Word(letters));
            }
        }
        out.extend(next.iter().cloned());
        layer = next;
    }
    out
}

/// Canonical moment indices of all words of length `1..=max_len`, sorted.
pub fn enumerate_moments(alphabet_size: usize, max_len: usize) -> Vec<CyclicWord> {
    let mut set = std::collections::BTreeSet::new();
    for w in enumerate_words(alphabet_size, max_len) {
        if !w.is_empty() {
            set.insert(canonical_moment(&w));
        }
    }
    set.into_iter().collect()
}

/// Outcome of reducing a moment index under a symmetry group.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Reduced {
    /// The moment is odd under some group element and must vanish.
    Zero,
    /// `m_w = sign * m_rep`.
    Image { rep: CyclicWord, sign: i8 },
}

/// Group generated by a set of [`SymmetryAction`]s, acting on moment indices.
#[derive(Clone, Debug, Default)]
pub struct SymmetryGroup {
    generators: Vec<SymmetryAction>,
}

impl SymmetryGroup {
    pub fn new(generators: Vec<SymmetryAction>) -> Self {
        SymmetryGroup { generators }
    }

    pub fn trivial() -> Self {
        SymmetryGroup::default()
    }

    pub fn generators(&self) -> &[SymmetryAction] {
        &self.generators
    }

    pub fn is_trivial(&self) -> bool {
        self.generators.is_empty()
    }

    /// Orbit representative (the smallest index in the orbit) and relative sign.
    pub fn reduce(&self, w: &CyclicWord) -> Reduced {
        let start = w.clone();
        let mut signs: BTreeMap<CyclicWord, i8> = BTreeMap::new();
        signs.insert(start.clone(), 1);
        let mut queue = VecDeque::from([start.clone()]);
        while let Some(cur) = queue.pop_front() {
            let cur_sign = signs[&cur];
            for g in &self.generators {
                let (img, s) = apply_symmetry(cur.word(), g);
                let key = canonical_moment(&img);
                let sign = cur_sign * s;
                match signs.get(&key) {
                    Some(&existing) if existing != sign => return Reduced::Zero,
                    Some(_) => {}
                    None => {
                        signs.insert(key.clone(), sign);
                        queue.push_back(key);
                    }
                }
            }
        }
        let (rep, sign) = signs.into_iter().next().expect("orbit contains the start");
        Reduced::Image { rep, sign }
    }
}

/// Letter naming for a fixed alphabet size: `H` for one matrix, `A, B, ...`
/// up to 26 letters, `X0, X1, ...` beyond.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Alphabet {
    size: usize,
}

impl Alphabet {
    pub fn new(size: usize) -> Self {
        Alphabet { size }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn letter_name(&self, l: Letter) -> String {
        if self.size == 1 {
            "H".to_string()
        } else if self.size <= 26 {
            ((b'A' + l.0) as char).to_string()
        } else {
            format!("X{}", l.0)
        }
    }

    /// Plain letter string; the empty word renders as `1`.
    pub fn render(&self, w: &Word) -> String {
        if w.is_empty() {
            return "1".to_string();
        }
        w.letters().iter().map(|&l| self.letter_name(l)).collect()
    }

    /// Run-length form used inside traces, e.g. `A^2B^2`, `ABAB`, `H^3`.
    pub fn render_powers(&self, w: &Word) -> String {
        if w.is_empty() {
            return "1".to_string();
        }
        let mut out = String::new();
        let letters = w.letters();
        let mut i = 0;
        while i < letters.len() {
            let mut j = i;
            while j < letters.len() && letters[j] == letters[i] {
                j += 1;
            }
            out.push_str(&self.letter_name(letters[i]));
            if j - i > 1 {
                out.push_str(&format!("^{}", j - i));
            }
            i = j;
        }
        out
    }

    /// Parse a plain letter string (`"AAB"`, `"HHH"`, `"1"` for the identity).
    pub fn parse(&self, s: &str) -> Result<Word> {
        let s = s.trim();
        if s == "1" || s.is_empty() {
            return Ok(Word::empty());
        }
        if self.size > 26 {
            let mut letters = Vec::new();
            for part in s.split('X').skip(1) {
                let idx: usize = part
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad letter in word `{s}`")))?;
                letters.push(self.check(idx, s)?);
            }
            return Ok(Word(letters));
        }
        s.chars()
            .map(|c| {
                let idx = if self.size == 1 && c == 'H' {
                    0
                } else if c.is_ascii_uppercase() {
                    (c as u8 - b'A') as usize
                } else {
                    return Err(Error::invalid(format!("bad letter `{c}` in word `{s}`")));
                };
                self.check(idx, s)
            })
            .collect::<Result<Vec<_>>>()
            .map(Word)
    }

    fn check(&self, idx: usize, s: &str) -> Result<Letter> {
        if idx >= self.size {
            return Err(Error::invalid(format!(
                "letter {idx} in `{s}` outside alphabet of size {}",
                self.size
            )));
        }
        Ok(Letter(idx as u8))
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let size = self.max_letter().map_or(1, |l| l.index() + 2).max(2);
        f.write_str(&Alphabet::new(size).render(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(s: &str) -> Word {
        Alphabet::new(2).parse(s).unwrap()
    }

    fn brute_min_rotation(x: &Word) -> Word {
        (0..x.len().max(1)).map(|k| x.rotate(k)).min_by(|a, b| a.letters().cmp(b.letters())).unwrap()
    }

    #[test]
    fn canonical_examples() {
        assert_eq!(canonical_cyclic(&w("BAA")).word(), &w("AAB"));
        assert_eq!(canonical_cyclic(&w("ABB")).word(), &w("ABB"));
        assert_eq!(canonical_cyclic(&Word::empty()).word(), &Word::empty());
        assert_eq!(canonical_cyclic(&w("BABA")).word(), &w("ABAB"));
    }

    #[test]
    fn adjoint_examples() {
        assert_eq!(adjoint(&w("AAB")), w("BAA"));
        assert_eq!(adjoint(&w("A")), w("A"));
        assert_eq!(adjoint(&Word::empty()), Word::empty());
    }

    #[test]
    fn symmetry_examples() {
        let flip_a = SymmetryAction::flip(Letter(0), 2);
        assert_eq!(apply_symmetry(&w("AAB"), &flip_a), (w("AAB"), 1));
        assert_eq!(apply_symmetry(&w("A"), &flip_a), (w("A"), -1));
        let swap = SymmetryAction::swap(Letter(0), Letter(1), 2);
        assert_eq!(apply_symmetry(&w("AB"), &swap), (w("BA"), 1));
    }

    #[test]
    fn symmetry_rejects_bad_input() {
        assert!(SymmetryAction::new(vec![1, 1], vec![Letter(0), Letter(0)]).is_err());
        assert!(SymmetryAction::new(vec![2, 1], vec![Letter(0), Letter(1)]).is_err());
    }

    #[test]
    fn enumerate_examples() {
        let one = Alphabet::new(1);
        let words: Vec<String> = enumerate_words(1, 3).iter().map(|x| one.render(x)).collect();
        assert_eq!(words, ["1", "H", "HH", "HHH"]);
        let two = Alphabet::new(2);
        let words: Vec<String> = enumerate_words(2, 2).iter().map(|x| two.render(x)).collect();
        assert_eq!(words, ["1", "A", "B", "AA", "AB", "BA", "BB"]);
        assert_eq!(enumerate_words(2, 0), vec![Word::empty()]);
    }

    #[test]
    fn group_reduction() {
        let g = SymmetryGroup::new(vec![
            SymmetryAction::flip(Letter(0), 2),
            SymmetryAction::flip(Letter(1), 2),
            SymmetryAction::swap(Letter(0), Letter(1), 2),
        ]);
        assert_eq!(g.reduce(&canonical_moment(&w("A"))), Reduced::Zero);
        assert_eq!(g.reduce(&canonical_moment(&w("AB"))), Reduced::Zero);
        assert_eq!(
            g.reduce(&canonical_moment(&w("BB"))),
            Reduced::Image { rep: canonical_moment(&w("AA")), sign: 1 }
        );
        assert_eq!(
            g.reduce(&canonical_moment(&w("BBAA"))),
            Reduced::Image { rep: canonical_moment(&w("AABB")), sign: 1 }
        );
    }

    #[test]
    fn chirality_first_appears_at_length_six() {
        assert!(enumerate_words(2, 5).iter().all(|x| !is_chiral(x)));
        assert!(is_chiral(&w("AABABB")));
    }

    #[test]
    fn render_and_parse() {
        let two = Alphabet::new(2);
        assert_eq!(two.render_powers(&w("AABB")), "A^2B^2");
        assert_eq!(two.render_powers(&w("ABAB")), "ABAB");
        assert_eq!(Alphabet::new(1).render_powers(&Word::power(Letter(0), 3)), "H^3");
        assert_eq!(two.render(&Word::empty()), "1");
        assert!(two.parse("AC").is_err());
        let big = Alphabet::new(30);
        let x = big.parse("X0X29X3").unwrap();
        assert_eq!(big.render(&x), "X0X29X3");
    }

    fn arb_word() -> impl Strategy<Value = Word> {
        prop::collection::vec(0u8..3, 0..12).prop_map(|v| Word::from_indices(&v))
    }

    proptest! {
        #[test]
        fn canonical_is_min_rotation(x in arb_word(), k in 0usize..12) {
            let c = canonical_cyclic(&x);
            prop_assert_eq!(c.word(), &brute_min_rotation(&x));
            prop_assert_eq!(canonical_cyclic(&x.rotate(k)), c.clone());
            prop_assert_eq!(canonical_cyclic(c.word()), c);
        }

        #[test]
        fn adjoint_is_involution(x in arb_word(), k in 0usize..12) {
            prop_assert_eq!(adjoint(&adjoint(&x)), x.clone());
            prop_assert_eq!(
                canonical_cyclic(&adjoint(&x.rotate(k))),
                canonical_cyclic(&adjoint(&x))
            );
        }

        #[test]
        fn involution_applied_twice(x in arb_word()) {
            for s in [
                SymmetryAction::flip(Letter(1), 3),
                SymmetryAction::swap(Letter(0), Letter(2), 3),
            ] {
                let (once, s1) = apply_symmetry(&x, &s);
                let (twice, s2) = apply_symmetry(&once, &s);
                prop_assert_eq!((twice, s1 * s2), (x.clone(), 1));
            }
        }

        #[test]
        fn enumeration_graded_and_unique(a in 1usize..4, n in 0usize..5) {
            let words = enumerate_words(a, n);
            let expected: usize = (0..=n).map(|k| a.pow(k as u32)).sum();
            prop_assert_eq!(words.len(), expected);
            prop_assert!(words.windows(2).all(|p| p[0] < p[1]));
        }
    }
}
