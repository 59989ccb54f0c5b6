# certificate_generator.py
# Destabilization certificate for HeatFlow Lab runs: ranks, slopes,
# thresholds and a QR code carrying the scenario hash.

from datetime import datetime
from io import BytesIO

import qrcode
from reportlab.lib import colors
from reportlab.lib.enums import TA_CENTER
from reportlab.lib.pagesizes import A4
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.lib.units import cm, inch
from reportlab.platypus import Image, Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle


def _fmt(value, digits: int = 6) -> str:
    if value is None:
        return "undefined"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return f"{value:.{digits}g}"
    return str(value)


def _table(rows, widths):
    table = Table(rows, colWidths=widths)
    table.setStyle(TableStyle([
        ('BACKGROUND', (0, 0), (-1, 0), colors.HexColor('#003366')),
        ('TEXTCOLOR', (0, 0), (-1, 0), colors.white),
        ('FONTNAME', (0, 0), (-1, 0), 'Helvetica-Bold'),
        ('FONTSIZE', (0, 0), (-1, -1), 9),
        ('GRID', (0, 0), (-1, -1), 0.5, colors.HexColor('#CCCCCC')),
        ('ROWBACKGROUNDS', (0, 1), (-1, -1), [colors.white, colors.HexColor('#F5F5F5')]),
        ('VALIGN', (0, 0), (-1, -1), 'MIDDLE'),
    ]))
    return table


def _qr_image(payload: str, size: float) -> Image:
    qr = qrcode.QRCode(version=1, box_size=4, border=1)
    qr.add_data(payload)
    qr.make(fit=True)
    img = qr.make_image(fill_color="black", back_color="white")
    buf = BytesIO()
    img.save(buf, format='PNG')
    buf.seek(0)
    return Image(buf, width=size, height=size)


def generate_certificate(report, scenario_hash=""):
    """
    Render the destabilizer report as a one-page PDF.

    Args:
        report (dict): output of destabilize_verdict (projection/limit removed)
        scenario_hash (str): sha256 of the scenario, encoded in the QR code

    Returns:
        bytes: the PDF document
    """
    buffer = BytesIO()
    doc = SimpleDocTemplate(buffer, pagesize=A4, rightMargin=1.5 * cm, leftMargin=1.5 * cm,
                            topMargin=1.5 * cm, bottomMargin=2 * cm,
                            title="Destabilization Certificate", author="HeatFlow Lab")
    styles = getSampleStyleSheet()
    heading = ParagraphStyle('Heading', parent=styles['Normal'], fontSize=18,
                             textColor=colors.HexColor('#003366'), alignment=TA_CENTER,
                             fontName='Helvetica-Bold', leading=22, spaceAfter=6)
    sub = ParagraphStyle('Sub', parent=styles['Normal'], fontSize=9, alignment=TA_CENTER,
                         textColor=colors.HexColor('#666666'), spaceAfter=12)
    body = ParagraphStyle('Body', parent=styles['Normal'], fontSize=9, leading=12)

    verdict = "DESTABILIZING SUBSHEAF FOUND" if report.get("destabilizing") else "NO DESTABILIZING SUBSHEAF"
    story = [
        Paragraph("HeatFlow Lab - Destabilization Certificate", heading),
        Paragraph(f"Generated {datetime.now().strftime('%d %B %Y %H:%M')}", sub),
        Paragraph(f"<b>Verdict:</b> {verdict}", body),
        Spacer(1, 0.2 * inch),
    ]

    terms = report.get("terms", {})
    rows = [
        ["Quantity", "Value"],
        ["rank E", _fmt(report.get("rank"))],
        ["rank F (k)", _fmt(report.get("k"))],
        ["mu(E)", _fmt(report.get("slope_bundle"))],
        ["mu(F)", _fmt(report.get("slope_subsheaf"))],
        ["curvature term", _fmt(terms.get("curvature_term"))],
        ["second fundamental form", _fmt(terms.get("second_fundamental_form"))],
        ["excluded cells", _fmt(terms.get("excluded_cells"))],
        ["exceptional cells", _fmt(report.get("exceptional_cells"))],
        ["sigma-limit gap", _fmt(report.get("sigma_limit_gap"))],
        ["sigma window", _fmt(report.get("sigma_window"))],
    ]
    story.append(_table(rows, [3.2 * inch, 3.2 * inch]))
    story.append(Spacer(1, 0.2 * inch))

    thresholds = report.get("thresholds", {})
    rows = [["Threshold", "Value"]] + [[k, _fmt(v)] for k, v in sorted(thresholds.items())]
    story.append(_table(rows, [3.2 * inch, 3.2 * inch]))
    story.append(Spacer(1, 0.2 * inch))

    gaps = report.get("gaps", [])
    if gaps:
        story.append(Paragraph(f"<b>Normalized-snapshot gaps (last five):</b> "
                               f"{', '.join(_fmt(g, 3) for g in gaps[-5:])}", body))
        story.append(Spacer(1, 0.2 * inch))

    story.append(_qr_image(f"HEATFLOW|{scenario_hash}|k={report.get('k')}", 1.4 * inch))
    story.append(Paragraph(f"<para alignment='center'><font size='7'>scenario {scenario_hash or 'n/a'}</font></para>",
                           body))

    def add_page_number(canvas, doc):
        canvas.saveState()
        canvas.setFont('Helvetica', 8)
        canvas.drawRightString(A4[0] - 1.5 * cm, 1 * cm, f"Page {canvas.getPageNumber()}")
        canvas.restoreState()

    doc.build(story, onFirstPage=add_page_number, onLaterPages=add_page_number)
    return buffer.getvalue()
