/// `(row, col)` offsets of the 8-neighbourhood, clockwise from north.
/// Rows grow downward as in the stored image.
pub const RING_OFFSETS: [(isize, isize); 8] =
    [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)];

/// Half the number of 0↔1 transitions walking once around the ring.
///
/// 1 marks a ridge ending, 2 a ridge continuation, 3 a bifurcation.
pub fn crossing_number(ring: &[bool; 8]) -> u8 {
    let transitions: u8 = (0..8).map(|i| u8::from(ring[i] != ring[(i + 1) % 8])).sum();
    transitions / 2
}
