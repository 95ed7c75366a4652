"""
PDF Report Generator for experiment runs
Renders run metadata, artifact hashes, acceptance checks and optimizer results with ReportLab
"""

from datetime import datetime

from reportlab.graphics.charts.barcharts import VerticalBarChart
from reportlab.graphics.shapes import Drawing
from reportlab.lib import colors
from reportlab.lib.enums import TA_CENTER
from reportlab.lib.pagesizes import letter
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.lib.units import inch
from reportlab.platypus import PageBreak, Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle

MAX_CHART_BARS = 24

HEADER_TABLE_STYLE = [
    ('BACKGROUND', (0, 0), (-1, 0), colors.HexColor('#34495e')),
    ('TEXTCOLOR', (0, 0), (-1, 0), colors.white),
    ('FONTNAME', (0, 0), (-1, 0), 'Helvetica-Bold'),
    ('FONTSIZE', (0, 0), (-1, -1), 8),
    ('GRID', (0, 0), (-1, -1), 0.5, colors.grey),
    ('ALIGN', (1, 1), (-1, -1), 'CENTER'),
    ('VALIGN', (0, 0), (-1, -1), 'MIDDLE'),
    ('LEFTPADDING', (0, 0), (-1, -1), 4),
    ('RIGHTPADDING', (0, 0), (-1, -1), 4),
    ('TOPPADDING', (0, 0), (-1, -1), 3),
    ('BOTTOMPADDING', (0, 0), (-1, -1), 3),
]


def _fmt(value, spec=".6g"):
    if value is None or value == "":
        return "N/A"
    try:
        return format(float(value), spec)
    except (TypeError, ValueError):
        return str(value)


def _status(results):
    acceptance = results.get("acceptance")
    if results.get("partial"):
        return "PARTIAL RUN ⚠", colors.HexColor('#f39c12')
    if acceptance is not None and not acceptance["passed"]:
        failed = len(acceptance["failed_rows"])
        return f"ACCEPTANCE FAILED: {failed}/{len(acceptance['tests'])} rows ✗", colors.HexColor('#e74c3c')
    if acceptance is not None:
        return f"ACCEPTANCE PASSED: {len(acceptance['tests'])} rows ✓", colors.HexColor('#27ae60')
    return "RUN COMPLETE ✓", colors.HexColor('#27ae60')


def _z_chart(tests):
    """Bar chart of |z| per compared row with the z_max gate as the axis ceiling"""
    values = [abs(t["z_score"]) for t in tests if t["z_score"] is not None][:MAX_CHART_BARS]
    if not values:
        return None
    drawing = Drawing(400, 200)
    chart = VerticalBarChart()
    chart.x = 50
    chart.y = 50
    chart.height = 125
    chart.width = 300
    chart.data = [values]
    chart.categoryAxis.categoryNames = [f"R{t['row']}" for t in tests if t["z_score"] is not None][:MAX_CHART_BARS]
    chart.valueAxis.valueMin = 0
    chart.valueAxis.valueMax = max(max(values), 4.0) * 1.1
    chart.bars[0].fillColor = colors.HexColor('#3498db')
    drawing.add(chart)
    return drawing


def generate_pdf_report(results, output_path):
    """
    Generate a PDF report of one experiment run.

    Args:
        results (dict): run_experiment results plus "manifest" and, when a
            comparison ran, "acceptance" (the compare_report dict)
        output_path (str): Destination PDF path

    Returns:
        str: output_path
    """
    # Create PDF document
    doc = SimpleDocTemplate(
        str(output_path),
        pagesize=letter,
        rightMargin=0.75 * inch,
        leftMargin=0.75 * inch,
        topMargin=0.75 * inch,
        bottomMargin=0.75 * inch
    )
    # Container for PDF elements
    elements = []

    # Styles
    styles = getSampleStyleSheet()
    title_style = ParagraphStyle(
        'CustomTitle',
        parent=styles['Heading1'],
        fontSize=22,
        textColor=colors.HexColor('#1a1a1a'),
        spaceAfter=6,
        alignment=TA_CENTER,
        fontName='Helvetica-Bold'
    )
    subtitle_style = ParagraphStyle(
        'Subtitle',
        parent=styles['Normal'],
        fontSize=12,
        textColor=colors.HexColor('#666666'),
        spaceAfter=20,
        alignment=TA_CENTER
    )
    heading2_style = ParagraphStyle(
        'CustomHeading2',
        parent=styles['Heading2'],
        fontSize=14,
        textColor=colors.HexColor('#2c3e50'),
        spaceAfter=12,
        spaceBefore=12,
        fontName='Helvetica-Bold'
    )

    # Header
    elements.append(Paragraph("State Reconstruction Experiment", title_style))
    elements.append(Paragraph(results.get("name", "experiment"), subtitle_style))
    elements.append(Spacer(1, 0.2 * inch))

    # Run information
    manifest = results.get("manifest", {})
    info = [
        ["Spec:", str(manifest.get("spec_path") or "N/A")],
        ["Spec SHA-256:", str(manifest.get("spec_sha256", "N/A"))[:32] + "..."],
        ["Seed:", str(manifest.get("seed", "N/A"))],
        ["Replicas:", str(manifest.get("replicas", "N/A"))],
        ["Sweep points:", str(results.get("points", 0))],
        ["Library:", f"{manifest.get('library_version', '?')} "
                     f"(numpy {manifest.get('numpy_version', '?')}, scipy {manifest.get('scipy_version', '?')})"],
    ]
    info_table = Table(info, colWidths=[1.5 * inch, 5 * inch])
    info_table.setStyle(TableStyle([
        ('FONTNAME', (0, 0), (0, -1), 'Helvetica-Bold'),
        ('FONTNAME', (1, 0), (1, -1), 'Helvetica'),
        ('FONTSIZE', (0, 0), (-1, -1), 10),
        ('TEXTCOLOR', (0, 0), (0, -1), colors.HexColor('#2c3e50')),
        ('VALIGN', (0, 0), (-1, -1), 'TOP'),
        ('LEFTPADDING', (0, 0), (-1, -1), 0),
    ]))
    elements.append(info_table)
    elements.append(Spacer(1, 0.3 * inch))

    # Overall status (highlighted box)
    status_text, status_color = _status(results)
    status_table = Table([[status_text]], colWidths=[6.5 * inch])
    status_table.setStyle(TableStyle([
        ('BACKGROUND', (0, 0), (-1, -1), status_color),
        ('TEXTCOLOR', (0, 0), (-1, -1), colors.white),
        ('FONTNAME', (0, 0), (-1, -1), 'Helvetica-Bold'),
        ('FONTSIZE', (0, 0), (-1, -1), 14),
        ('ALIGN', (0, 0), (-1, -1), 'CENTER'),
        ('VALIGN', (0, 0), (-1, -1), 'MIDDLE'),
        ('TOPPADDING', (0, 0), (-1, -1), 12),
        ('BOTTOMPADDING', (0, 0), (-1, -1), 12),
    ]))
    elements.append(status_table)
    elements.append(Spacer(1, 0.3 * inch))

    # Failed sweep points
    if results.get("errors"):
        elements.append(Paragraph("⚠ FAILED POINTS", heading2_style))
        for error in results["errors"]:
            elements.append(Paragraph(f"• {error}", styles['Normal']))
        elements.append(Spacer(1, 0.2 * inch))

    # Section 1: Output files
    elements.append(Paragraph("1. OUTPUTS", heading2_style))
    hashes = manifest.get("outputs", {})
    output_data = [["File", "Rows", "SHA-256"]]
    for name, path in results.get("files", {}).items():
        filename = path.replace("\\", "/").rsplit("/", 1)[-1]
        output_data.append([filename, str(len(results["rows"].get(name, []))),
                            hashes.get(filename, "")[:24]])
    output_table = Table(output_data, colWidths=[2 * inch, 1 * inch, 3.5 * inch])
    output_table.setStyle(TableStyle(HEADER_TABLE_STYLE))
    elements.append(output_table)
    elements.append(Spacer(1, 0.3 * inch))

    # Section 2: Acceptance checks
    acceptance = results.get("acceptance")
    if acceptance is not None:
        elements.append(Paragraph(
            f"2. ANALYTIC VS MONTE CARLO (|z| ≤ {acceptance['z_max']:g}, "
            f"relative error ≤ {acceptance['rel_bound']:.2%})",
            heading2_style
        ))
        chart = _z_chart(acceptance["tests"])
        if chart is not None:
            elements.append(chart)
            elements.append(Spacer(1, 0.2 * inch))

        # Per-row checks
        check_data = [["Row", "Scheme", "Analytic", "Simulated", "z", "Rel. error", "Status"]]
        for t in acceptance["tests"]:
            check_data.append([
                str(t["row"]),
                str(t["key"].get("scheme", "")),
                _fmt(t["expected"]),
                _fmt(t["actual"]),
                _fmt(t["z_score"], "+.2f"),
                _fmt(t["rel_error"], ".3%"),
                "✓" if t["passed"] else "✗",
            ])
        check_table = Table(check_data, colWidths=[0.5 * inch, 1 * inch, 1.1 * inch, 1.1 * inch,
                                                   0.8 * inch, 1 * inch, 0.6 * inch])
        check_table.setStyle(TableStyle(HEADER_TABLE_STYLE))
        elements.append(check_table)
        elements.append(Spacer(1, 0.3 * inch))

    # Section 3: Optimizer results
    optimize_rows = results.get("rows", {}).get("optimize")
    if optimize_rows:
        elements.append(PageBreak())
        elements.append(Paragraph("3. OPTIMIZATION", heading2_style))
        opt_data = [["Scheme", "Method", "MSSC", "N*", "h* (ms)", "MSE*", "Iter.", "Conv."]]
        for row in optimize_rows:
            scheme, method, _, _, mssc, _, n_star, h_star, mse_star, _, iterations, converged, _ = row
            opt_data.append([
                scheme, method, _fmt(mssc, ".3f"), str(n_star),
                "-" if h_star is None else _fmt(h_star * 1e3, ".1f"),
                _fmt(mse_star, ".4f"), str(iterations), "✓" if converged else "✗",
            ])
        opt_table = Table(opt_data, colWidths=[0.9 * inch, 1.2 * inch, 0.7 * inch, 0.6 * inch,
                                               0.8 * inch, 0.9 * inch, 0.6 * inch, 0.6 * inch])
        opt_table.setStyle(TableStyle(HEADER_TABLE_STYLE))
        elements.append(opt_table)

    # Footer
    elements.append(Spacer(1, 0.4 * inch))
    footer_style = ParagraphStyle(
        'Footer',
        parent=styles['Normal'],
        fontSize=8,
        textColor=colors.grey,
        alignment=TA_CENTER
    )
    elements.append(Paragraph("=" * 80, footer_style))
    elements.append(Paragraph(
        f"End of Experiment Report • Generated: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}",
        footer_style
    ))

    # Build PDF
    doc.build(elements)
    return output_path
