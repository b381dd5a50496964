fn main() {
    for m in [sse_core::ito::Measurement::Counting, sse_core::ito::Measurement::Quadrature] {
        let eq = sse_core::ito::assemble_belavkin_equation(m).unwrap();
        println!("{}", sse_core::ito::render_equation(&eq));
    }
}
