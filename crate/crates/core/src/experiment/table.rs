/// `x` rounded to four significant digits, in plain decimal notation.
pub fn sig4(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    let decimals = 3 - exp;
    if decimals >= 0 {
        let s = format!("{:.*}", decimals as usize, x);
        // Rounding can carry into a new leading digit (9.9996 -> 10.000).
        let rounded: f64 = s.parse().unwrap_or(x);
        if rounded.abs() >= 10f64.powi(exp + 1) && decimals > 0 {
            return format!("{:.*}", decimals as usize - 1, x);
        }
        s
    } else {
        let scale = 10f64.powi(-decimals);
        format!("{:.0}", (x / scale).round() * scale)
    }
}

/// Renders rows as a fixed-width text table with a header rule.
pub fn render(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&width)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    out.push_str(&"-".repeat(width.iter().sum::<usize>() + 2 * width.len().saturating_sub(1)));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_significant_digits() {
        assert_eq!(sig4(0.318_149), "0.3181");
        assert_eq!(sig4(0.066_449), "0.06645");
        assert_eq!(sig4(0.027_1), "0.02710");
        assert_eq!(sig4(1.56), "1.560");
        assert_eq!(sig4(9.999_6), "10.00");
        assert_eq!(sig4(123_456.0), "123500");
        assert_eq!(sig4(-0.264_66), "-0.2647");
        assert_eq!(sig4(0.0), "0");
    }

    #[test]
    fn columns_align() {
        let t = render(&["a", "long"], &[vec!["123".into(), "x".into()]]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "  a  long");
        assert_eq!(lines[2], "123     x");
    }
}
