//! Euclidean division and modulo with `x / 0 == 0`.

/// Euclidean quotient. Division by zero yields zero.
///
/// Together with [`hmod`] this satisfies `x == y * hdiv(x, y) + hmod(x, y)`
/// and `0 <= hmod(x, y) < |y|` for every `y != 0`.
pub fn hdiv(x: i64, y: i64) -> i64 {
    if y == 0 {
        return 0;
    }
    let q = x.wrapping_div(y);
    let r = x.wrapping_rem(y);
    if r < 0 {
        if y > 0 {
            q - 1
        } else {
            q + 1
        }
    } else {
        q
    }
}

/// Euclidean remainder, always in `[0, |y|)`. Modulo zero yields zero.
pub fn hmod(x: i64, y: i64) -> i64 {
    if y == 0 {
        return 0;
    }
    let r = x.wrapping_rem(y);
    if r < 0 {
        r + y.abs()
    } else {
        r
    }
}

/// Checked variant of [`hdiv`]; `None` only for `i64::MIN / -1`.
pub fn checked_hdiv(x: i64, y: i64) -> Option<i64> {
    if y == -1 && x == i64::MIN {
        return None;
    }
    Some(hdiv(x, y))
}

/// Truncating (C-style) division, `x / 0 == 0`. Only used to model faulty code.
pub fn trunc_div(x: i64, y: i64) -> i64 {
    if y == 0 {
        0
    } else {
        x.wrapping_div(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force oracle: the unique (q, r) with x = y*q + r and 0 <= r < |y|.
    fn oracle(x: i64, y: i64) -> (i64, i64) {
        for q in -20..=20 {
            let r = x - y * q;
            if 0 <= r && r < y.abs() {
                return (q, r);
            }
        }
        unreachable!()
    }

    #[test]
    fn division_by_zero_is_zero() {
        assert_eq!(hdiv(7, 0), 0);
        assert_eq!(hmod(7, 0), 0);
        assert_eq!(hdiv(-7, 0), 0);
    }

    #[test]
    fn small_values_match_oracle() {
        assert_eq!((hdiv(7, 3), hmod(7, 3)), (2, 1));
        assert_eq!((hdiv(-7, 3), hmod(-7, 3)), (-3, 2));
        for x in -20..=20 {
            for y in (-7..=7).filter(|&y| y != 0) {
                assert_eq!((hdiv(x, y), hmod(x, y)), oracle(x, y), "x={x} y={y}");
            }
        }
    }

    #[test]
    fn negative_divisor() {
        assert_eq!((hdiv(-7, -3), hmod(-7, -3)), (3, 2));
        assert_eq!((hdiv(7, -3), hmod(7, -3)), (-2, 1));
    }

    #[test]
    fn trunc_differs_on_negatives() {
        assert_eq!(trunc_div(-7, 3), -2);
        assert_eq!(hdiv(-7, 3), -3);
    }
}
