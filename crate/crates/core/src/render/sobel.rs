use super::image::ImageBuffer;

const KX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const KY: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

#[inline]
fn clamp_coord(v: i64, n: u32) -> u32 {
    v.clamp(0, n as i64 - 1) as u32
}

/// 3x3 Sobel responses `(d/dx, d/dy)` per channel, unnormalized, with
/// replicate padding.
pub fn sobel(image: &ImageBuffer) -> (ImageBuffer, ImageBuffer) {
    let (w, h) = (image.width, image.height);
    let mut gx = ImageBuffer::new(w, h);
    let mut gy = ImageBuffer::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut ax = [0.0; 3];
            let mut ay = [0.0; 3];
            for (j, (rx, ry)) in KX.iter().zip(&KY).enumerate() {
                let yy = clamp_coord(y as i64 + j as i64 - 1, h);
                for i in 0..3 {
                    let xx = clamp_coord(x as i64 + i as i64 - 1, w);
                    let p = image.get(xx, yy);
                    for c in 0..3 {
                        ax[c] += rx[i] * p[c];
                        ay[c] += ry[i] * p[c];
                    }
                }
            }
            let k = (y * w + x) as usize;
            gx.rgb[k] = ax;
            gy.rgb[k] = ay;
        }
    }
    (gx, gy)
}

/// Adjoint of [`sobel`]: maps gradients on its two outputs back to the input.
pub fn sobel_adjoint(grad_x: &ImageBuffer, grad_y: &ImageBuffer) -> ImageBuffer {
    let (w, h) = (grad_x.width, grad_x.height);
    let mut out = ImageBuffer::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let gx = grad_x.get(x, y);
            let gy = grad_y.get(x, y);
            for (j, (rx, ry)) in KX.iter().zip(&KY).enumerate() {
                let yy = clamp_coord(y as i64 + j as i64 - 1, h);
                for i in 0..3 {
                    let xx = clamp_coord(x as i64 + i as i64 - 1, w);
                    let dst = &mut out.rgb[(yy * w + xx) as usize];
                    for c in 0..3 {
                        dst[c] += rx[i] * gx[c] + ry[i] * gy[c];
                    }
                }
            }
        }
    }
    out
}
