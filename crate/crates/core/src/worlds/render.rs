use super::billiards::BilliardsState;

pub const FRAME_SIDE: usize = 28;
pub const FRAME_PIXELS: usize = FRAME_SIDE * FRAME_SIDE;

/// Draws filled disks with a one-pixel linear edge falloff into a 28×28
/// frame. Centers are in unit-box coordinates; `x` maps to columns and `y`
/// to rows (row 0 at `y = 1`). Overlaps saturate at 1.
pub fn render_disks(centers: &[[f64; 2]], radius: f64) -> Vec<f64> {
    let side = FRAME_SIDE as f64;
    let r_px = radius * side;
    let mut frame = vec![0.0; FRAME_PIXELS];
    for c in centers {
        let (cx, cy) = (c[0] * side, (1.0 - c[1]) * side);
        for row in 0..FRAME_SIDE {
            let py = row as f64 + 0.5;
            for col in 0..FRAME_SIDE {
                let px = col as f64 + 0.5;
                let dist = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
                let v = (r_px + 0.5 - dist).clamp(0.0, 1.0);
                let cell = &mut frame[row * FRAME_SIDE + col];
                *cell = (*cell + v).min(1.0);
            }
        }
    }
    frame
}

/// Top-down frame of a billiards state. One-dimensional worlds are drawn
/// along the middle row, with the moving coordinate on the horizontal axis.
pub fn render_pixels(state: &BilliardsState, render_radius: f64) -> Vec<f64> {
    let centers: Vec<[f64; 2]> = state
        .balls
        .iter()
        .map(|b| if state.dims == 1 { [b.pos[1], 0.5] } else { b.pos })
        .collect();
    render_disks(&centers, render_radius)
}
