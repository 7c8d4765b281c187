//! Scalar float functions that work with and without `std`.

macro_rules! unary {
    ($($name:ident => $std:ident, $libm:ident;)*) => {$(
        #[inline]
        pub fn $name(x: f64) -> f64 {
            #[cfg(feature = "std")]
            return x.$std();
            #[cfg(not(feature = "std"))]
            return libm::$libm(x);
        }
    )*};
}

unary! {
    sqrt => sqrt, sqrt;
    exp => exp, exp;
    ln => ln, log;
    log2 => log2, log2;
    log10 => log10, log10;
    tanh => tanh, tanh;
    sin => sin, sin;
    cos => cos, cos;
    floor => floor, floor;
}

#[inline]
pub fn powi(x: f64, n: i32) -> f64 {
    libm::pow(x, n as f64)
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    // One correction pass; exact for constant input.
    m + xs.iter().map(|v| v - m).sum::<f64>() / n
}

/// Population standard deviation.
pub fn std_pop(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    sqrt(xs.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / xs.len() as f64)
}
